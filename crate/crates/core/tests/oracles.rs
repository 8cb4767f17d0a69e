//! Forward passes checked against straightforward scalar reimplementations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vargraph::autodiff::{ParamStore, Tape};
use vargraph::graph::{EdgeType, HeteroGraph, Label, VariantRecord};
use vargraph::layers::gat::GatLayer;
use vargraph::layers::{hetero_aggregate, ForwardOptions, Mode, Model, ModelConfig};
use vargraph::synth::toy_dataset;
use vargraph::Tensor;

type Matrix = Vec<Vec<f64>>;

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_matrix(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn param(store: &ParamStore, name: &str) -> Matrix {
    to_matrix(store.get(store.find(name).unwrap_or_else(|| panic!("no parameter {name}"))).value())
}

/// `x W` for a row vector `x`.
fn vec_mat(x: &[f64], w: &Matrix) -> Vec<f64> {
    let cols = w[0].len();
    (0..cols).map(|c| x.iter().zip(w).map(|(xi, row)| xi * row[c]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column(m: &Matrix) -> Vec<f64> {
    m.iter().map(|r| r[0]).collect()
}

/// One GAT layer by the textbook formulas. `edges[i]` lists the
/// `(source, weight)` neighbors of destination `i`.
fn scalar_gat(
    store: &ParamStore,
    prefix: &str,
    heads: usize,
    x_src: &Matrix,
    x_dst: &Matrix,
    edges: &[Vec<(usize, f64)>],
    use_weights: bool,
) -> Matrix {
    let w_self = param(store, &format!("{prefix}.w_self"));
    x_dst
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut message = Vec::new();
            for h in 0..heads {
                let w_src = param(store, &format!("{prefix}.head{h}.w_src"));
                let w_dst = param(store, &format!("{prefix}.head{h}.w_dst"));
                let a_src = column(&param(store, &format!("{prefix}.head{h}.att_src")));
                let a_dst = column(&param(store, &format!("{prefix}.head{h}.att_dst")));
                let width = w_src[0].len();
                let mut m = vec![0.0; width];
                if !edges[i].is_empty() {
                    let dst_score = dot(&a_dst, &vec_mat(xi, &w_dst));
                    let logits: Vec<f64> = edges[i]
                        .iter()
                        .map(|&(j, w)| {
                            let bonus = if use_weights { w.ln() } else { 0.0 };
                            leaky(dst_score + dot(&a_src, &vec_mat(&x_src[j], &w_src)) + bonus)
                        })
                        .collect();
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                    for (&(j, _), l) in edges[i].iter().zip(&logits) {
                        let alpha = (l - max).exp() / z;
                        for (mk, pk) in m.iter_mut().zip(vec_mat(&x_src[j], &w_src)) {
                            *mk += alpha * pk;
                        }
                    }
                }
                message.extend(m);
            }
            vec_mat(xi, &w_self).iter().zip(&message).map(|(s, m)| leaky(s + m)).collect()
        })
        .collect()
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn max_diff(a: &Matrix, b: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    for (r, row) in a.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(r, c)).abs());
        }
    }
    worst
}

fn variant(id: &str, gene: &str, features: Vec<f64>) -> VariantRecord {
    VariantRecord {
        variant_id: id.into(),
        chrom: "chr1".into(),
        pos: 1,
        ref_allele: "A".into(),
        alt_allele: "C".into(),
        gene_id: gene.into(),
        features,
        label: Label::Benign,
    }
}

#[test]
fn three_node_path_matches_scalar_gat() {
    let genes: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let edges = vec![("A".to_string(), "B".to_string(), 1.0), ("B".to_string(), "C".to_string(), 1.0)];
    let graph = HeteroGraph::build(&[variant("v", "A", vec![0.0])], &edges, &genes).unwrap();
    let index = graph.message_index(EdgeType::Interact);

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = GatLayer::new(&mut store, &mut rng, "g", 2, 2, 1).unwrap();
    let set = |store: &mut ParamStore, name: &str, rows: &[&[f64]]| {
        let id = store.find(name).unwrap();
        store.get_mut(id).assign(Tensor::from_rows(rows)).unwrap();
    };
    set(&mut store, "g.head0.w_src", &[&[0.5, -0.3], &[0.2, 0.8]]);
    set(&mut store, "g.head0.w_dst", &[&[-0.4, 0.1], &[0.7, 0.6]]);
    set(&mut store, "g.head0.att_src", &[&[0.9], &[-0.5]]);
    set(&mut store, "g.head0.att_dst", &[&[0.3], &[1.2]]);
    set(&mut store, "g.w_self", &[&[1.0, 0.25], &[-0.75, 0.5]]);

    let x = vec![vec![1.0, -1.0], vec![0.5, 2.0], vec![-1.5, 0.25]];
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_rows(&x));
    let out = layer.forward(&mut tape, &store, xv, xv, &index).unwrap();
    let adjacency = vec![vec![(1, 1.0)], vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0)]];
    let expected = scalar_gat(&store, "g", 1, &x, &x, &adjacency, false);
    assert!(max_diff(&expected, tape.value(out.features)) <= 1e-12);
}

#[test]
fn empty_neighborhood_gets_self_path_only() {
    let genes: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
    let graph = HeteroGraph::build(&[variant("v", "A", vec![0.0])], &[], &genes).unwrap();
    let index = graph.message_index(EdgeType::Interact);
    let mut store = ParamStore::new();
    let layer = GatLayer::new(&mut store, &mut ChaCha8Rng::seed_from_u64(1), "g", 4, 4, 2).unwrap();
    let x = vec![vec![0.3, -0.2, 1.0, 0.5], vec![-1.0, 0.4, 0.0, 2.0]];
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_rows(&x));
    let out = layer.forward(&mut tape, &store, xv, xv, &index).unwrap();
    let w_self = param(&store, "g.w_self");
    let expected: Matrix = x.iter().map(|xi| vec_mat(xi, &w_self).into_iter().map(leaky).collect()).collect();
    assert!(max_diff(&expected, tape.value(out.features)) <= 1e-15);
}

#[test]
fn symmetric_pair_gets_identical_outputs() {
    let genes: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
    let edges = vec![("A".to_string(), "B".to_string(), 1.0)];
    let graph = HeteroGraph::build(&[variant("v", "A", vec![0.0])], &edges, &genes).unwrap();
    let mut store = ParamStore::new();
    let layer = GatLayer::new(&mut store, &mut ChaCha8Rng::seed_from_u64(2), "g", 4, 4, 2).unwrap();
    let row = [0.1, 0.7, -0.3, 0.9];
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_rows(&[row, row]));
    let out = layer.forward(&mut tape, &store, xv, xv, &graph.message_index(EdgeType::Interact)).unwrap();
    let y = tape.value(out.features);
    assert_eq!(y.row(0), y.row(1));
}

fn edges_into_genes(graph: &HeteroGraph) -> Vec<Vec<(usize, f64)>> {
    let mut e = vec![Vec::new(); graph.gene_count()];
    for v in 0..graph.variant_count() {
        e[graph.variant_gene(v)].push((v, 1.0));
    }
    e
}

fn edges_into_variants(graph: &HeteroGraph) -> Vec<Vec<(usize, f64)>> {
    (0..graph.variant_count()).map(|v| vec![(graph.variant_gene(v), 1.0)]).collect()
}

fn edges_among_genes(graph: &HeteroGraph) -> Vec<Vec<(usize, f64)>> {
    let mut e = vec![Vec::new(); graph.gene_count()];
    for (a, b, w) in graph.gene_edge_triples() {
        let (a, b) = (graph.gene_position(&a).unwrap(), graph.gene_position(&b).unwrap());
        e[a].push((b, w));
        e[b].push((a, w));
    }
    e
}

fn scalar_given_model(model: &Model, graph: &HeteroGraph) -> Vec<f64> {
    let store = &model.store;
    let heads = model.config.heads;
    let features = to_matrix(&graph.feature_matrix());
    let w_in = param(store, "input.weight");
    let b_in = param(store, "input.bias");
    let v0: Matrix = features
        .iter()
        .map(|x| vec_mat(x, &w_in).iter().zip(&b_in[0]).map(|(a, b)| a + b).collect())
        .collect();
    let g0 = param(store, "gene_embedding");
    let weighted = model.config.use_edge_weights;

    let from_variants = scalar_gat(store, "round0.in", heads, &v0, &g0, &edges_into_genes(graph), false);
    let interact = scalar_gat(store, "round0.interact", heads, &g0, &g0, &edges_among_genes(graph), weighted);
    let g1 = add(&from_variants, &interact);
    let v1 = scalar_gat(store, "round0.has", heads, &g0, &v0, &edges_into_variants(graph), false);
    let v2 = scalar_gat(store, "final.has", heads, &g1, &v1, &edges_into_variants(graph), false);

    let w_head = param(store, "head.weight");
    let b_head = param(store, "head.bias")[0][0];
    v2.iter().map(|v| sigmoid(vec_mat(v, &w_head)[0] + b_head)).collect()
}

#[test]
fn toy_given_model_matches_scalar_forward() {
    let graph = toy_dataset().graph().unwrap();
    for weighted in [false, true] {
        let mut config = ModelConfig::for_mode(Mode::Given);
        config.use_edge_weights = weighted;
        let model = Model::new(Mode::Given, config, 5, 2, 42).unwrap();
        let got = model.predict(&graph).unwrap();
        let expected = scalar_given_model(&model, &graph);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_head_predicts_one_half() {
    let graph = toy_dataset().graph().unwrap();
    for mode in [Mode::Given, Mode::Learnt] {
        let mut model = Model::new(mode, ModelConfig::for_mode(mode), 5, 2, 3).unwrap();
        for name in ["head.weight", "head.bias"] {
            let id = model.store.find(name).unwrap();
            let shape = model.store.get(id).value().shape().to_vec();
            model.store.get_mut(id).assign(Tensor::zeros(&shape)).unwrap();
        }
        assert!(model.predict(&graph).unwrap().iter().all(|&y| y == 0.5));
    }
}

#[test]
fn permuting_variants_permutes_predictions() {
    let toy = toy_dataset();
    let graph = toy.graph().unwrap();
    let order = [5usize, 2, 7, 0, 3, 1, 6, 4];
    let shuffled: Vec<_> = order.iter().map(|&i| toy.variants[i].clone()).collect();
    let permuted = HeteroGraph::build(&shuffled, &toy.gene_edges, &toy.genes).unwrap();
    for mode in [Mode::Given, Mode::Learnt] {
        let model = Model::new(mode, ModelConfig::for_mode(mode), 5, 2, 9).unwrap();
        let base = model.predict(&graph).unwrap();
        let moved = model.predict(&permuted).unwrap();
        for (k, &i) in order.iter().enumerate() {
            assert!((moved[k] - base[i]).abs() <= 1e-12);
        }
    }
}

#[test]
fn relabeling_genes_leaves_given_predictions_unchanged() {
    let toy = toy_dataset();
    let graph = toy.graph().unwrap();
    let model = Model::new(Mode::Given, ModelConfig::for_mode(Mode::Given), 5, 2, 4).unwrap();
    let perm = [3usize, 0, 4, 1, 2]; // new position of old gene i
    let mut genes = vec![String::new(); 5];
    for (old, &new) in perm.iter().enumerate() {
        genes[new] = toy.genes[old].clone();
    }
    let relabeled_graph = HeteroGraph::build(&toy.variants, &toy.gene_edges, &genes).unwrap();
    let mut relabeled = model.clone();
    let id = relabeled.store.find("gene_embedding").unwrap();
    let old = model.store.get(id).value().clone();
    let mut rows = vec![vec![0.0; old.cols()]; 5];
    for (o, &n) in perm.iter().enumerate() {
        rows[n] = old.row(o).to_vec();
    }
    relabeled.store.get_mut(id).assign(Tensor::from_rows(&rows)).unwrap();
    let a = model.predict(&graph).unwrap();
    let b = relabeled.predict(&relabeled_graph).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn aggregation_is_a_plain_sum() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]));
    let b = tape.constant(Tensor::from_rows(&[[3.0, 4.0]]));
    let single = hetero_aggregate(&mut tape, &[a]).unwrap();
    assert_eq!(tape.value(single).data(), &[1.0, 2.0]);
    let s = hetero_aggregate(&mut tape, &[a, b]).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let parts: Vec<Tensor> = (0..3).map(|_| vargraph::layers::init::scaled_normal(&mut rng, 1, 4, 1.0)).collect();
    let vars: Vec<_> = parts.iter().map(|p| tape.constant(p.clone())).collect();
    let s = hetero_aggregate(&mut tape, &vars).unwrap();
    for c in 0..4 {
        let fold = (parts[0].data()[c] + parts[1].data()[c]) + parts[2].data()[c];
        assert!((tape.value(s).data()[c] - fold).abs() <= 1e-15);
    }
    let wide = tape.constant(Tensor::zeros(&[1, 3]));
    assert_eq!(hetero_aggregate(&mut tape, &[a, wide]).unwrap_err().class(), "dimension");
}

#[test]
fn forward_rejects_mismatched_graph() {
    let graph = toy_dataset().graph().unwrap();
    let model = Model::new(Mode::Given, ModelConfig::for_mode(Mode::Given), 6, 2, 0).unwrap();
    let mut tape = Tape::new();
    let err = model.forward(&mut tape, &graph, ForwardOptions::eval()).err().unwrap();
    assert_eq!(err.class(), "dimension");
}
