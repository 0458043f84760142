//! Hierarchical graph convolution with self-attention.
//!
//! The graph comes from tsFC: adjacency by proportional-threshold
//! binarization, node features are the tsFC rows. Each residual block
//! computes `H' = MLP(H ⊕ ReLU(Â_norm · H · Θ))` with `Â_norm` the
//! symmetrically normalized adjacency (self-loops added first). A columnwise
//! max readout after every block yields one token per block; single-head
//! scaled dot-product attention over those tokens produces the graph
//! embedding `y^G` and, through a sigmoid projection of the mean attended
//! token, the edge-space attention vector `a`.

use rand::Rng;

use crate::connectivity::{binarize_adjacency, ConnError};
use crate::gradcore::{GradError, ParamSet, Tape, Tensor, Var};

/// Binary adjacency plus node features (rows of tsFC).
#[derive(Debug, Clone)]
pub struct Graph {
    pub adjacency: Tensor,
    pub features: Tensor,
}

/// Builds the graph for one subject from the tsFC values.
pub fn build_graph(tsfc: &Tensor, keep_ratio: f64) -> Result<Graph, ConnError> {
    let adjacency = binarize_adjacency(tsfc, keep_ratio)?;
    Ok(Graph {
        adjacency,
        features: tsfc.clone(),
    })
}

/// Symmetric normalization with self-loops: `Â = A + I`,
/// `Â_norm = D̂^{-1/2} Â D̂^{-1/2}` with `D̂_ii = Σ_j Â_ij`.
///
/// Degrees are at least 1 because of the self-loops, so no division guard is
/// needed.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor, GradError> {
    if !a.is_square() {
        return Err(GradError::BadShape {
            op: "normalize_adjacency",
            expected: "a square matrix",
            shape: a.shape().to_vec(),
        });
    }
    let m = a.rows();
    let mut hat = a.data().to_vec();
    for i in 0..m {
        hat[i * m + i] += 1.0;
    }
    let mut deg = vec![0.0; m];
    for i in 0..m {
        deg[i] = hat[i * m..(i + 1) * m].iter().sum();
    }
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            // 1/sqrt(d_i d_j) keeps integer-degree cases exact
            out[i * m + j] = hat[i * m + j] / (deg[i] * deg[j]).sqrt();
        }
    }
    Tensor::matrix(m, m, out)
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Tensor, GradError> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::matrix(rows, cols, data)
}

fn block_input_width(block: usize, m: usize, d: usize) -> usize {
    if block == 0 {
        m
    } else {
        d
    }
}

/// Registers Θ and the residual-block MLP for every block, plus the attention
/// projections, the token MLP behind `y^G`, and the edge projection behind
/// `a`. All Glorot-uniform, biases zero.
pub fn init_params(
    params: &mut ParamSet,
    m: usize,
    d: usize,
    blocks: usize,
    rng: &mut impl Rng,
) -> Result<(), GradError> {
    let e = m * (m - 1) / 2;
    for b in 0..blocks {
        let d_in = block_input_width(b, m, d);
        params.insert(&format!("hgcn.block{b}.theta"), glorot(d_in, d, rng)?)?;
        params.insert(
            &format!("hgcn.block{b}.mlp.w1"),
            glorot(d_in + d, d, rng)?,
        )?;
        params.insert(&format!("hgcn.block{b}.mlp.b1"), Tensor::zeros(vec![1, d]))?;
        params.insert(&format!("hgcn.block{b}.mlp.w2"), glorot(d, d, rng)?)?;
        params.insert(&format!("hgcn.block{b}.mlp.b2"), Tensor::zeros(vec![1, d]))?;
    }
    for proj in ["wq", "wk", "wv"] {
        params.insert(&format!("hgcn.attn.{proj}"), glorot(d, d, rng)?)?;
    }
    params.insert("hgcn.attn.out.w1", glorot(blocks * d, d, rng)?)?;
    params.insert("hgcn.attn.out.b1", Tensor::zeros(vec![1, d]))?;
    params.insert("hgcn.attn.out.w2", glorot(d, d, rng)?)?;
    params.insert("hgcn.attn.out.b2", Tensor::zeros(vec![1, d]))?;
    params.insert("hgcn.attn.edge.w", glorot(d, e, rng)?)?;
    params.insert("hgcn.attn.edge.b", Tensor::zeros(vec![1, e]))?;
    Ok(())
}

fn mlp(
    tape: &mut Tape,
    x: Var,
    params: &ParamSet,
    prefix: &str,
) -> Result<Var, GradError> {
    let w1 = tape.param(&format!("{prefix}.w1"), params)?;
    let b1 = tape.param(&format!("{prefix}.b1"), params)?;
    let w2 = tape.param(&format!("{prefix}.w2"), params)?;
    let b2 = tape.param(&format!("{prefix}.b2"), params)?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, w2)?;
    tape.add_bias(h, b2)
}

/// One residual block: `H' = MLP(H ⊕ ReLU(Â_norm · H · Θ))`.
pub fn gcn_block(
    tape: &mut Tape,
    h: Var,
    anorm: Var,
    params: &ParamSet,
    block: usize,
) -> Result<Var, GradError> {
    let theta = tape.param(&format!("hgcn.block{block}.theta"), params)?;
    let agg = tape.matmul(anorm, h)?;
    let conv = tape.matmul(agg, theta)?;
    let conv = tape.relu(conv)?;
    let cat = tape.concat(h, conv, 1)?;
    mlp(tape, cat, params, &format!("hgcn.block{block}.mlp"))
}

/// Columnwise maximum of the node embeddings, as a `1 x d` token.
pub fn readout_max(tape: &mut Tape, h: Var) -> Result<Var, GradError> {
    let d = tape.value(h).cols();
    let ht = tape.transpose(h)?;
    let col = tape.row_max(ht)?;
    tape.reshape(col, vec![1, d])
}

/// Outputs of the self-attention stage.
pub struct SelfAttentionOut {
    /// Graph-level embedding `y^G`, shape `1 x d`.
    pub graph_embedding: Var,
    /// Edge-space attention vector `a` in (0,1)^E, shape `1 x E`.
    pub edge_attention: Var,
    /// Attention weight matrix (k x k); rows sum to 1.
    pub weights: Var,
}

/// Single-head scaled dot-product attention over the `k x d` token matrix.
pub fn self_attention(
    tape: &mut Tape,
    tokens: Var,
    params: &ParamSet,
) -> Result<SelfAttentionOut, GradError> {
    let (k, d) = (tape.value(tokens).rows(), tape.value(tokens).cols());
    let wq = tape.param("hgcn.attn.wq", params)?;
    let wk = tape.param("hgcn.attn.wk", params)?;
    let wv = tape.param("hgcn.attn.wv", params)?;
    let q = tape.matmul(tokens, wq)?;
    let key = tape.matmul(tokens, wk)?;
    let v = tape.matmul(tokens, wv)?;
    let key_t = tape.transpose(key)?;
    let scores = tape.matmul(q, key_t)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax(scaled)?;
    let attended = tape.matmul(weights, v)?;

    // concatenated attended tokens -> output MLP -> y^G
    let flat = tape.reshape(attended, vec![1, k * d])?;
    let graph_embedding = mlp(tape, flat, params, "hgcn.attn.out")?;

    // mean attended token -> sigmoid edge projection -> a
    let averager = tape.input(Tensor::filled(vec![1, k], 1.0 / k as f64).expect("finite"));
    let mean_token = tape.matmul(averager, attended)?;
    let ew = tape.param("hgcn.attn.edge.w", params)?;
    let eb = tape.param("hgcn.attn.edge.b", params)?;
    let logits = tape.matmul(mean_token, ew)?;
    let logits = tape.add_bias(logits, eb)?;
    let edge_attention = tape.sigmoid(logits)?;

    Ok(SelfAttentionOut {
        graph_embedding,
        edge_attention,
        weights,
    })
}

/// Full branch: residual blocks over the normalized adjacency, one readout
/// token per block, then self-attention.
pub fn hgcn_forward(
    tape: &mut Tape,
    anorm: Var,
    features: Var,
    params: &ParamSet,
    blocks: usize,
) -> Result<SelfAttentionOut, GradError> {
    let mut h = features;
    let mut tokens: Option<Var> = None;
    for b in 0..blocks {
        h = gcn_block(tape, h, anorm, params, b)?;
        let token = readout_max(tape, h)?;
        tokens = Some(match tokens {
            Some(prev) => tape.concat(prev, token, 0)?,
            None => token,
        });
    }
    let tokens = tokens.expect("at least one block");
    self_attention(tape, tokens, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rand_features(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn random_adjacency(rng: &mut ChaCha20Rng, m: usize) -> Tensor {
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                if rng.gen_bool(0.5) {
                    data[i * m + j] = 1.0;
                    data[j * m + i] = 1.0;
                }
            }
        }
        Tensor::matrix(m, m, data).unwrap()
    }

    #[test]
    fn build_graph_keep_all_is_complete() {
        let tsfc = Tensor::from_fn(4, 4, |i, j| {
            if i == j {
                0.0
            } else {
                0.1 * (i + j) as f64
            }
        })
        .unwrap();
        let g = build_graph(&tsfc, 1.0).unwrap();
        let off_diag_ones = g.adjacency.data().iter().filter(|v| **v == 1.0).count();
        assert_eq!(off_diag_ones, 12);
        assert_eq!(g.features.data(), tsfc.data());
    }

    #[test]
    fn build_graph_zero_tsfc_is_edgeless() {
        let g = build_graph(&Tensor::zeros(vec![3, 3]), 0.5).unwrap();
        assert_eq!(g.adjacency.data(), &[0.0; 9]);
        assert_eq!(g.features.data(), &[0.0; 9]);
    }

    #[test]
    fn build_graph_edge_count_matches_ceiling() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let tsfc = {
            let raw = rand_features(&mut rng, 6, 6);
            Tensor::from_fn(6, 6, |i, j| 0.5 * (raw.at(i, j) + raw.at(j, i))).unwrap()
        };
        let g = build_graph(&tsfc, 0.3).unwrap();
        let e = 15.0;
        let expect = (0.3f64 * e).ceil();
        assert_eq!(g.adjacency.data().iter().sum::<f64>(), 2.0 * expect);
    }

    #[test]
    fn normalize_two_node_closed_form() {
        let a = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let n = normalize_adjacency(&a).unwrap();
        assert_eq!(n.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn normalize_edgeless_graph_is_identity() {
        let n = normalize_adjacency(&Tensor::zeros(vec![3, 3])).unwrap();
        assert_eq!(n.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_regular_graph_rows_sum_to_one() {
        // 4-cycle: every node has degree 2, entries 1/3 across three slots
        let a = Tensor::matrix(
            4,
            4,
            vec![
                0.0, 1.0, 0.0, 1.0, //
                1.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 1.0, //
                1.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        let n = normalize_adjacency(&a).unwrap();
        for i in 0..4 {
            let row: f64 = (0..4).map(|j| n.at(i, j)).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric_with_unit_spectral_bound() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        for _ in 0..10 {
            let a = random_adjacency(&mut rng, 6);
            let n = normalize_adjacency(&a).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    assert!((n.at(i, j) - n.at(j, i)).abs() < 1e-15);
                }
            }
            // power iteration for the dominant eigenvalue
            let apply = |v: &[f64]| -> Vec<f64> {
                (0..6)
                    .map(|i| (0..6).map(|j| n.at(i, j) * v[j]).sum())
                    .collect()
            };
            let mut v = vec![1.0f64; 6];
            for _ in 0..200 {
                let mut next = apply(&v);
                let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in next.iter_mut() {
                    *x /= norm;
                }
                v = next;
            }
            let av = apply(&v);
            let lambda: f64 = av.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!(lambda <= 1.0 + 1e-9, "spectral radius {lambda}");
        }
    }

    #[test]
    fn zero_theta_keeps_only_the_residual_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let (m, d) = (4, 3);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, 1, &mut rng).unwrap();
        params
            .set_value("hgcn.block0.theta", Tensor::zeros(vec![m, d]))
            .unwrap();
        let features = rand_features(&mut rng, m, m);
        let anorm = normalize_adjacency(&random_adjacency(&mut rng, m)).unwrap();

        let mut tape = Tape::new();
        let h = tape.input(features.clone());
        let a = tape.input(anorm);
        let out = gcn_block(&mut tape, h, a, &params, 0).unwrap();

        // residual-only reference: MLP(H ⊕ 0)
        let mut ref_tape = Tape::new();
        let h2 = ref_tape.input(features);
        let zeros = ref_tape.input(Tensor::zeros(vec![m, d]));
        let cat = ref_tape.concat(h2, zeros, 1).unwrap();
        let reference = mlp(&mut ref_tape, cat, &params, "hgcn.block0.mlp").unwrap();
        assert_eq!(tape.value(out).data(), ref_tape.value(reference).data());
    }

    #[test]
    fn edgeless_graph_reduces_to_per_node_transform() {
        // with A = 0, Â_norm = I, so the ReLU branch is ReLU(HΘ) per node
        let mut rng = ChaCha20Rng::seed_from_u64(26);
        let (m, d) = (3, 2);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, 1, &mut rng).unwrap();
        let features = rand_features(&mut rng, m, m);
        let anorm = normalize_adjacency(&Tensor::zeros(vec![m, m])).unwrap();

        let mut tape = Tape::new();
        let h = tape.input(features.clone());
        let a = tape.input(anorm);
        let out = gcn_block(&mut tape, h, a, &params, 0).unwrap();

        let mut ref_tape = Tape::new();
        let h2 = ref_tape.input(features);
        let theta = ref_tape.param("hgcn.block0.theta", &params).unwrap();
        let conv = ref_tape.matmul(h2, theta).unwrap();
        let conv = ref_tape.relu(conv).unwrap();
        let cat = ref_tape.concat(h2, conv, 1).unwrap();
        let reference = mlp(&mut ref_tape, cat, &params, "hgcn.block0.mlp").unwrap();
        for (a, b) in tape
            .value(out)
            .data()
            .iter()
            .zip(ref_tape.value(reference).data())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
        let (r, c) = (t.rows(), t.cols());
        Tensor::from_fn(r, c, |i, j| t.at(perm[i], j)).unwrap()
    }

    fn permute_both(t: &Tensor, perm: &[usize]) -> Tensor {
        let m = t.rows();
        Tensor::from_fn(m, m, |i, j| t.at(perm[i], perm[j])).unwrap()
    }

    #[test]
    fn gcn_block_is_permutation_equivariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(50);
        let (m, d) = (6, 4);
        for trial in 0..50 {
            let mut params = ParamSet::new();
            init_params(&mut params, m, d, 1, &mut rng).unwrap();
            let features = rand_features(&mut rng, m, m);
            let anorm = normalize_adjacency(&random_adjacency(&mut rng, m)).unwrap();
            let mut perm: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }

            let mut tape = Tape::new();
            let h = tape.input(features.clone());
            let a = tape.input(anorm.clone());
            let out = gcn_block(&mut tape, h, a, &params, 0).unwrap();
            let permuted_out = permute_rows(tape.value(out), &perm);

            let mut tape2 = Tape::new();
            let hp = tape2.input(permute_rows(&features, &perm));
            let ap = tape2.input(permute_both(&anorm, &perm));
            let out2 = gcn_block(&mut tape2, hp, ap, &params, 0).unwrap();

            for (x, y) in permuted_out.data().iter().zip(tape2.value(out2).data()) {
                assert!((x - y).abs() < 1e-10, "trial {trial}");
            }
        }
    }

    #[test]
    fn readout_max_examples() {
        let mut tape = Tape::new();
        let h = tape.input(Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap());
        let r = readout_max(&mut tape, h).unwrap();
        assert_eq!(tape.value(r).data(), &[3.0, 5.0]);

        let single = tape.input(Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let r1 = readout_max(&mut tape, single).unwrap();
        assert_eq!(tape.value(r1).data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn readout_max_is_permutation_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        let h = rand_features(&mut rng, 5, 3);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.reverse();
        let mut tape = Tape::new();
        let hv = tape.input(h.clone());
        let r = readout_max(&mut tape, hv).unwrap();
        let hp = tape.input(permute_rows(&h, &perm));
        let rp = readout_max(&mut tape, hp).unwrap();
        assert_eq!(tape.value(r).data(), tape.value(rp).data());
    }

    #[test]
    fn single_token_attention_is_its_own_value() {
        let mut rng = ChaCha20Rng::seed_from_u64(60);
        let (m, d) = (4, 3);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, 1, &mut rng).unwrap();
        let token = rand_features(&mut rng, 1, d);
        let mut tape = Tape::new();
        let tv = tape.input(token.clone());
        let out = self_attention(&mut tape, tv, &params).unwrap();
        assert_eq!(tape.value(out.weights).data(), &[1.0]);
        // attended token equals the value projection of the sole token
        let mut ref_tape = Tape::new();
        let t2 = ref_tape.input(token);
        let wv = ref_tape.param("hgcn.attn.wv", &params).unwrap();
        let v = ref_tape.matmul(t2, wv).unwrap();
        let flat = ref_tape.reshape(v, vec![1, d]).unwrap();
        let expected = mlp(&mut ref_tape, flat, &params, "hgcn.attn.out").unwrap();
        for (a, b) in tape
            .value(out.graph_embedding)
            .data()
            .iter()
            .zip(ref_tape.value(expected).data())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let mut rng = ChaCha20Rng::seed_from_u64(61);
        let (m, d, k) = (4, 3, 3);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, k, &mut rng).unwrap();
        let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tokens = Tensor::matrix(k, d, row.repeat(k)).unwrap();
        let mut tape = Tape::new();
        let tv = tape.input(tokens);
        let out = self_attention(&mut tape, tv, &params).unwrap();
        for w in tape.value(out.weights).data() {
            assert!((w - 1.0 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_a_lies_in_unit_interval() {
        let mut rng = ChaCha20Rng::seed_from_u64(62);
        let (m, d, k) = (5, 4, 3);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, k, &mut rng).unwrap();
        let tokens = rand_features(&mut rng, k, d);
        let mut tape = Tape::new();
        let tv = tape.input(tokens);
        let out = self_attention(&mut tape, tv, &params).unwrap();
        let w = tape.value(out.weights);
        for i in 0..k {
            let row: f64 = (0..k).map(|j| w.at(i, j)).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
        for v in tape.value(out.edge_attention).data() {
            assert!(*v > 0.0 && *v < 1.0);
        }
        assert_eq!(tape.value(out.edge_attention).cols(), m * (m - 1) / 2);
    }

    #[test]
    fn zero_parameters_make_the_branch_constant() {
        let mut rng = ChaCha20Rng::seed_from_u64(63);
        let (m, d, blocks) = (4, 3, 2);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, blocks, &mut rng).unwrap();
        let zeroed: Vec<String> = params.names().map(str::to_string).collect();
        for name in zeroed {
            let shape = params.value(&name).unwrap().shape().to_vec();
            params.set_value(&name, Tensor::zeros(shape)).unwrap();
        }
        let run = |features: Tensor| -> Vec<f64> {
            let mut tape = Tape::new();
            let anorm = tape.input(normalize_adjacency(&Tensor::zeros(vec![m, m])).unwrap());
            let x = tape.input(features);
            let out = hgcn_forward(&mut tape, anorm, x, &params, blocks).unwrap();
            tape.value(out.graph_embedding).data().to_vec()
        };
        let a = run(rand_features(&mut rng, m, m));
        let b = run(rand_features(&mut rng, m, m));
        assert_eq!(a, b);
    }

    #[test]
    fn token_sequence_is_invariant_to_node_relabeling() {
        // applying P to the adjacency and to the node ordering (rows of H)
        // leaves every readout token unchanged
        let mut rng = ChaCha20Rng::seed_from_u64(64);
        let (m, d, blocks) = (5, 3, 2);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, blocks, &mut rng).unwrap();
        let features = rand_features(&mut rng, m, m);
        let adjacency = random_adjacency(&mut rng, m);
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }

        let run = |adj: &Tensor, feats: &Tensor| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let anorm = tape.input(normalize_adjacency(adj).unwrap());
            let x = tape.input(feats.clone());
            let out = hgcn_forward(&mut tape, anorm, x, &params, blocks).unwrap();
            (
                tape.value(out.graph_embedding).data().to_vec(),
                tape.value(out.edge_attention).data().to_vec(),
            )
        };
        let (yg, a) = run(&adjacency, &features);
        let (yg_p, a_p) = run(
            &permute_both(&adjacency, &perm),
            &permute_rows(&features, &perm),
        );
        for (x, y) in yg.iter().zip(&yg_p) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in a.iter().zip(&a_p) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn full_branch_gradient_passes_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(65);
        let (m, d, blocks) = (4, 3, 2);
        let mut params = ParamSet::new();
        init_params(&mut params, m, d, blocks, &mut rng).unwrap();
        let features = rand_features(&mut rng, m, m);
        let anorm = normalize_adjacency(&random_adjacency(&mut rng, m)).unwrap();
        let err = grad_check_params(
            |tape, p| {
                let a = tape.input(anorm.clone());
                let x = tape.input(features.clone());
                let out = hgcn_forward(tape, a, x, p, blocks)?;
                let g2 = tape.mul(out.graph_embedding, out.graph_embedding)?;
                let a2 = tape.mul(out.edge_attention, out.edge_attention)?;
                let s1 = tape.sum(g2)?;
                let s2 = tape.sum(a2)?;
                tape.add(s1, s2)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
