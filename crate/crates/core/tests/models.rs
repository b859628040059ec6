mod common;

use std::sync::Arc;

use common::{assert_close, connected_graph, random_matrix};
use fbgsp::autodiff::{sigmoid, Tape};
use fbgsp::model::{
    spatial_fb_channels, spectral_fb_forward, Activation, Architecture, Channels,
    ForwardOptions, GraphContext, LayerParams, LayerTensors, Model, ModelConfig, Transform,
};
use fbgsp::{Graph, Matrix, OperatorKind, SparseOperator};
use proptest::prelude::*;

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Dense `Â_rw` straight from the adjacency, independent of the CSR code.
fn dense_renorm_rw(g: &Graph) -> Matrix {
    let n = g.node_count();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        let nbrs = g.neighbors(i).unwrap();
        let w = 1.0 / (nbrs.len() as f64 + 1.0);
        m[(i, i)] = w;
        for &j in nbrs {
            m[(i, j)] = w;
        }
    }
    m
}

fn default_ctx(g: &Arc<Graph>) -> GraphContext {
    GraphContext::new(
        Arc::clone(g),
        OperatorKind::RenormRwAffinity,
        OperatorKind::RenormRwLaplacian,
    )
    .unwrap()
}

fn predict_with(model: &Model, ctx: &GraphContext, x: &Matrix, opts: &ForwardOptions) -> Matrix {
    let mut tape = Tape::new();
    let xt = tape.constant(x.clone()).unwrap();
    let f = model.forward(&mut tape, ctx, xt, opts).unwrap();
    tape.value(f.logits).clone()
}

fn randomize_alphas(model: &mut Model, base: f64) {
    for (k, l) in model.layers.iter_mut().enumerate() {
        l.a_l_raw = Some(base + 0.4 * k as f64);
        l.a_h_raw = Some(-base + 0.1 * k as f64);
    }
}

#[test]
fn spectral_fb_matches_dense_oracle() {
    let g = Arc::new(connected_graph(31, 12, 0.2));
    let ctx = default_ctx(&g);
    let mut model = Model::init(ModelConfig::new(Architecture::FB_SPECTRAL, vec![6, 5, 3]), 4).unwrap();
    randomize_alphas(&mut model, 0.8);
    let x = random_matrix(32, 12, 6);

    let a = dense_renorm_rw(&g);
    let l = Matrix::identity(12).sub(&a).unwrap();
    let mut h = x.clone();
    for layer in &model.layers {
        let (al, ah) = layer.alphas().unwrap();
        let low = a.matmul(&relu(&h.matmul(&layer.w_l).unwrap())).unwrap();
        let high = l.matmul(&relu(&h.matmul(layer.w_h.as_ref().unwrap()).unwrap())).unwrap();
        h = low.scale(al).add(&high.scale(ah)).unwrap();
    }
    assert_close(&model.predict(&ctx, &x).unwrap(), &h, 1e-10);
}

#[test]
fn gcn_matches_dense_oracle() {
    let g = Arc::new(connected_graph(33, 12, 0.2));
    let ctx = default_ctx(&g);
    let model = Model::init(ModelConfig::new(Architecture::Gcn, vec![6, 8, 3]), 5).unwrap();
    let x = random_matrix(34, 12, 6);
    let a = dense_renorm_rw(&g);
    let hidden = relu(&a.matmul(&x).unwrap().matmul(&model.layers[0].w_l).unwrap());
    let want = a.matmul(&hidden).unwrap().matmul(&model.layers[1].w_l).unwrap();
    assert_close(&model.predict(&ctx, &x).unwrap(), &want, 1e-10);
}

#[test]
fn ablation_cells_match_dense_oracle() {
    let g = Arc::new(connected_graph(35, 12, 0.2));
    let ctx = default_ctx(&g);
    let a = dense_renorm_rw(&g);
    let l = Matrix::identity(12).sub(&a).unwrap();
    let x = random_matrix(36, 12, 4);
    for arch in Architecture::ABLATION_GRID {
        let Architecture::Spectral { channels, transform } = arch else { unreachable!() };
        let mut model = Model::init(ModelConfig::new(arch, vec![4, 5, 3]), 6).unwrap();
        if channels == Channels::Two {
            randomize_alphas(&mut model, -0.3);
        }
        let f = |m: Matrix| match transform {
            Transform::Nonlinear => relu(&m),
            Transform::Linear => m,
        };
        let outer = channels == Channels::One || transform == Transform::Linear;
        let mut h = x.clone();
        for (i, layer) in model.layers.iter().enumerate() {
            let low = a.matmul(&f(h.matmul(&layer.w_l).unwrap())).unwrap();
            h = match channels {
                Channels::One => low,
                Channels::Two => {
                    let (al, ah) = layer.alphas().unwrap();
                    let high = l.matmul(&f(h.matmul(layer.w_h.as_ref().unwrap()).unwrap())).unwrap();
                    low.scale(al).add(&high.scale(ah)).unwrap()
                }
            };
            if outer && i + 1 < model.layers.len() {
                h = relu(&h);
            }
        }
        assert_close(&model.predict(&ctx, &x).unwrap(), &h, 1e-10);
    }
}

#[test]
fn linear_one_channel_cell_is_gcn() {
    let g = Arc::new(connected_graph(37, 12, 0.2));
    let ctx = default_ctx(&g);
    let gcn = Model::init(ModelConfig::new(Architecture::Gcn, vec![4, 6, 3]), 9).unwrap();
    let mut cell = Model::init(ModelConfig::new(Architecture::ABLATION_GRID[0], vec![4, 6, 3]), 9).unwrap();
    cell.layers[0].w_l = gcn.layers[0].w_l.clone();
    cell.layers[1].w_l = gcn.layers[1].w_l.clone();
    let x = random_matrix(38, 12, 4);
    assert_close(&cell.predict(&ctx, &x).unwrap(), &gcn.predict(&ctx, &x).unwrap(), 1e-12);
}

#[test]
fn suppressed_high_pass_channel() {
    let g = Arc::new(connected_graph(39, 10, 0.3));
    let ctx = default_ctx(&g);
    let w = random_matrix(40, 3, 2);
    let layer = LayerParams {
        w_l: w.clone(),
        w_h: Some(w.clone()),
        a_l_raw: Some(0.4),
        a_h_raw: Some(-30.0),
    };
    let x = random_matrix(41, 10, 3);
    let mut tape = Tape::new();
    let xt = tape.constant(x.clone()).unwrap();
    let lt = LayerTensors::record(&mut tape, &layer).unwrap();
    let out = spectral_fb_forward(&mut tape, &ctx, &lt, xt, &ForwardOptions::default()).unwrap();
    let lp = SparseOperator::build(&g, OperatorKind::RenormRwAffinity).unwrap();
    let want = lp.apply(&relu(&x.matmul(&w).unwrap())).unwrap().scale(sigmoid(0.4));
    assert_close(tape.value(out), &want, 1e-9);
}

#[test]
fn complementary_channels_in_identity_mode() {
    let g = Arc::new(Graph::from_edges(&[(0, 1), (1, 2)], 3).unwrap());
    let ctx = default_ctx(&g);
    let layer = LayerParams {
        w_l: Matrix::filled(1, 1, 1.0),
        w_h: Some(Matrix::filled(1, 1, 1.0)),
        a_l_raw: Some(0.0),
        a_h_raw: Some(0.0),
    };
    let h = Matrix::column(&[1.0, 2.0, 3.0]);
    for opts in [
        ForwardOptions { activation: Activation::Identity, alpha_override: None },
        ForwardOptions { activation: Activation::Relu, alpha_override: Some((0.5, 0.5)) },
    ] {
        let mut tape = Tape::new();
        let ht = tape.constant(h.clone()).unwrap();
        let lt = LayerTensors::record(&mut tape, &layer).unwrap();
        let out = spectral_fb_forward(&mut tape, &ctx, &lt, ht, &opts).unwrap();
        assert_close(tape.value(out), &h.scale(0.5), 1e-15);
    }
}

#[test]
fn identity_mode_with_equal_weights_returns_hw() {
    let g = Arc::new(connected_graph(42, 9, 0.3));
    for (lp, hp) in [
        (OperatorKind::SymAffinity, OperatorKind::SymNormLaplacian),
        (OperatorKind::RenormSymAffinity, OperatorKind::RenormSymLaplacian),
        (OperatorKind::RenormRwAffinity, OperatorKind::RenormRwLaplacian),
    ] {
        let ctx = GraphContext::new(Arc::clone(&g), lp, hp).unwrap();
        let w = random_matrix(43, 4, 3);
        let layer = LayerParams {
            w_l: w.clone(),
            w_h: Some(w.clone()),
            a_l_raw: None,
            a_h_raw: None,
        };
        let x = random_matrix(44, 9, 4);
        let opts = ForwardOptions { activation: Activation::Identity, alpha_override: Some((1.0, 1.0)) };
        let mut tape = Tape::new();
        let xt = tape.constant(x.clone()).unwrap();
        let lt = LayerTensors::record(&mut tape, &layer).unwrap();
        let out = spectral_fb_forward(&mut tape, &ctx, &lt, xt, &opts).unwrap();
        assert_close(tape.value(out), &x.matmul(&w).unwrap(), 1e-12);
    }
}

#[test]
fn spatial_model_stacks_layers() {
    let g = Arc::new(connected_graph(45, 11, 0.2));
    let ctx = default_ctx(&g);
    let mut model = Model::init(ModelConfig::new(Architecture::Spatial, vec![4, 5, 2]), 7).unwrap();
    randomize_alphas(&mut model, 0.2);
    let x = random_matrix(46, 11, 4);
    let a = dense_renorm_rw(&g);
    let l = Matrix::identity(11).sub(&a).unwrap();
    let mut h = x.clone();
    for layer in &model.layers {
        let (al, ah) = layer.alphas().unwrap();
        let hl = relu(&h.matmul(&layer.w_l.transpose()).unwrap());
        let hh = relu(&h.matmul(&layer.w_h.as_ref().unwrap().transpose()).unwrap());
        let low = hl.add(&a.matmul(&hl).unwrap()).unwrap();
        let high = l.matmul(&hh).unwrap();
        h = low.scale(al).add(&high.scale(ah)).unwrap();
    }
    assert_close(&model.predict(&ctx, &x).unwrap(), &h, 1e-10);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = Model::init(ModelConfig::new(Architecture::Spatial, vec![3, 4, 2]), 1).unwrap();
    model.save_checkpoint(&path).unwrap();
    assert_eq!(Model::load_checkpoint(&path).unwrap(), model);
    std::fs::write(&path, "{not json").unwrap();
    assert!(Model::load_checkpoint(&path).is_err());
}

#[test]
fn invalid_configs() {
    let gcn3 = ModelConfig::new(Architecture::Gcn, vec![3, 4, 4, 2]);
    assert!(Model::init(gcn3, 0).is_err());
    let mut mismatched = ModelConfig::new(Architecture::FB_SPECTRAL, vec![3, 2]);
    mismatched.hp_kind = OperatorKind::SymNormLaplacian;
    assert!(Model::init(mismatched, 0).is_err());
    assert!(Model::init(ModelConfig::new(Architecture::Spatial, vec![3]), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parameter_doubling(dims in prop::collection::vec(1usize..40, 2..5)) {
        let n = dims.len() - 1;
        for transform in [Transform::Linear, Transform::Nonlinear] {
            let one = Architecture::Spectral { channels: Channels::One, transform };
            let two = Architecture::Spectral { channels: Channels::Two, transform };
            let p1 = Model::init(ModelConfig::new(one, dims.clone()), 0).unwrap().parameter_count();
            let p2 = Model::init(ModelConfig::new(two, dims.clone()), 0).unwrap().parameter_count();
            prop_assert_eq!(p2, 2 * p1 + 2 * n);
        }
        let spatial = Model::init(ModelConfig::new(Architecture::Spatial, dims.clone()), 0).unwrap();
        let fb = Model::init(ModelConfig::new(Architecture::FB_SPECTRAL, dims.clone()), 0).unwrap();
        prop_assert_eq!(spatial.parameter_count(), fb.parameter_count());
    }

    #[test]
    fn spatial_channels_match_spectral_formulas(seed in 0u64..10_000, n in 2usize..25) {
        let g = Arc::new(connected_graph(seed, n, 0.15));
        let ctx = default_ctx(&g);
        let model = Model::init(ModelConfig::new(Architecture::Spatial, vec![3, 4]), seed).unwrap();
        let x = random_matrix(seed, n, 3);
        let mut tape = Tape::new();
        let xt = tape.constant(x.clone()).unwrap();
        let lt = LayerTensors::record(&mut tape, &model.layers[0]).unwrap();
        let (_, low, high) = spatial_fb_channels(&mut tape, &ctx, &lt, xt, &ForwardOptions::default()).unwrap();
        let layer = &model.layers[0];
        let hl = relu(&x.matmul(&layer.w_l.transpose()).unwrap());
        let hh = relu(&x.matmul(&layer.w_h.as_ref().unwrap().transpose()).unwrap());
        let a = SparseOperator::build(&g, OperatorKind::RenormRwAffinity).unwrap();
        let l = SparseOperator::build(&g, OperatorKind::RenormRwLaplacian).unwrap();
        prop_assert!(tape.value(low).max_abs_diff(&hl.add(&a.apply(&hl).unwrap()).unwrap()) <= 1e-12);
        prop_assert!(tape.value(high).max_abs_diff(&l.apply(&hh).unwrap()) <= 1e-12);
    }

    #[test]
    fn alphas_stay_in_unit_interval(raw in -30.0f64..30.0) {
        let layer = LayerParams { w_l: Matrix::zeros(1, 1), w_h: None, a_l_raw: Some(raw), a_h_raw: Some(-raw) };
        let (al, ah) = layer.alphas().unwrap();
        prop_assert!(al > 0.0 && al < 1.0 && ah > 0.0 && ah < 1.0);
    }

    #[test]
    fn forward_is_finite_and_shaped(seed in 0u64..10_000, n in 2usize..20) {
        let g = Arc::new(connected_graph(seed, n, 0.2));
        let ctx = default_ctx(&g);
        let x = random_matrix(seed, n, 3);
        for arch in [Architecture::Gcn, Architecture::Spatial].into_iter().chain(Architecture::ABLATION_GRID) {
            let model = Model::init(ModelConfig::new(arch, vec![3, 4, 2]), seed).unwrap();
            let out = predict_with(&model, &ctx, &x, &ForwardOptions::default());
            prop_assert_eq!(out.shape(), (n, 2));
            prop_assert!(out.is_finite());
        }
    }
}
