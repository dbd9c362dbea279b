//! Acceptance suite. Each test prints one line `criterion N: PASS|FAIL ...`.
//!
//! Report lines go straight to stderr so they show up without `--nocapture`.
//! Criteria 5, 6, 7 and 10 take minutes on a single core.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use schmidt_tns::contraction::{infinite_energy, Evaluator, Observable};
use schmidt_tns::lattice::{
    build_hamiltonian, build_zpaf, build_zpaf_fragment, Bipartition, Boundary, Hamiltonian, Lattice, ModelKind, ModelParams,
};
use schmidt_tns::optimizer::{train, train_with, TrainConfig};
use schmidt_tns::oracle::{ed_ground_state, entanglement_entropy, schmidt_decompose, top_k_schmidt};
use schmidt_tns::sampler::{exact_distribution, sample, validate};
use schmidt_tns::schmidt::{bits_of, init_state, materialize, mps_amplitude, open_bond_dims, Architecture, LAMBDA_AXES};
use schmidt_tns::tensor::{ParamKind, Parameter, Tensor, DEFAULT_MEMORY_CAP};

fn line(text: &str) {
    let _ = writeln!(std::io::stderr(), "{text}");
}

fn report(n: u32, pass: bool, detail: &str) {
    line(&format!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" }));
}

fn model(lattice: &Lattice, kind: ModelKind, h_x: Option<f64>) -> Hamiltonian {
    build_hamiltonian(lattice, kind, ModelParams { h_x }).unwrap()
}

fn fragment(n: usize) -> (Lattice, Bipartition) {
    build_zpaf_fragment(n).unwrap()
}

fn cell() -> (Lattice, Bipartition) {
    build_zpaf(1, Boundary::Open).unwrap()
}

#[test]
fn criterion_01_unitarity_after_every_step() {
    let mut worst = 0.0f64;
    let mut steps = 0usize;
    let cases: Vec<(Lattice, Bipartition, ModelKind, Option<f64>, usize, usize)> = vec![
        {
            let (l, b) = fragment(8);
            (l, b, ModelKind::Heisenberg, None, 2, 3)
        },
        {
            let (l, b) = cell();
            (l, b, ModelKind::Tim, Some(0.5), 3, 4)
        },
        {
            let (l, b) = fragment(10);
            (l, b, ModelKind::Xy, None, 1, 2)
        },
    ];
    let cfg = TrainConfig {
        eta: 0.2,
        max_steps: 60,
        ..Default::default()
    };
    for (l, b, kind, h_x, layers, chi) in cases {
        let h = model(&l, kind, h_x);
        let a = Architecture::brick_wall(&l, &b, layers, chi).unwrap();
        let s = init_state(&a, 4).unwrap();
        train_with(&s, &h, &cfg, |st| {
            steps += 1;
            worst = worst.max(st.max_unitarity_defect().unwrap());
        })
        .unwrap();
    }
    let (l, b) = build_zpaf(1, Boundary::Infinite).unwrap();
    let h = model(&l, ModelKind::Heisenberg, None);
    let a = Architecture::translational(&l, &b, 1, 2).unwrap();
    let s = init_state(&a, 9).unwrap();
    let short = TrainConfig { max_steps: 10, ..cfg };
    train_with(&s, &h, &short, |st| {
        steps += 1;
        worst = worst.max(st.max_unitarity_defect().unwrap());
    })
    .unwrap();

    let pass = worst < 1e-12 && steps > 0;
    report(1, pass, &format!("max ‖QᵀQ − I‖∞ = {worst:.2e} over {steps} accepted steps (< 1e-12)"));
    assert!(pass);
}

#[test]
fn criterion_02_gradient_matches_finite_differences() {
    let (l, b) = fragment(8);
    let h = model(&l, ModelKind::Heisenberg, None);
    let a = Architecture::brick_wall(&l, &b, 2, 3).unwrap();
    let s = init_state(&a, 17).unwrap();
    let ev = Evaluator::for_hamiltonian(&a, &h).unwrap();
    let (_, grads) = ev.evaluate_with_gradients(&s, None).unwrap();

    let sizes: Vec<usize> = s.parameters().map(|p| p.raw.data().len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = rng.gen_range(0..sizes.len());
        let k = rng.gen_range(0..sizes[p]);
        let shifted = |d: f64| {
            let mut t = s.clone();
            t.parameters_mut().nth(p).unwrap().raw.data_mut()[k] += d;
            ev.evaluate(&t, None).unwrap().energy
        };
        let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        let g = grads[p].data()[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs());
        worst = worst.max(rel);
    }
    let pass = worst < 1e-5;
    report(2, pass, &format!("max relative error {worst:.2e} over 20 coordinates (< 1e-5)"));
    assert!(pass);
}

#[test]
fn criterion_03_ansatz_identity() {
    let mut sv_err = 0.0f64;
    let mut norm_err = 0.0f64;
    for (n, layers, chi, seed) in [(8, 2, 2, 1), (9, 1, 3, 2), (10, 3, 2, 3), (12, 2, 4, 4)] {
        let (l, b) = fragment(n);
        let a = Architecture::brick_wall(&l, &b, layers, chi).unwrap();
        let mut s = init_state(&a, seed).unwrap();
        // λ off the unit-norm manifold
        for p in &mut s.lambda {
            for x in p.raw.data_mut() {
                *x *= 1.07;
            }
        }
        let psi = materialize(&s).unwrap();
        let norm_sq: f64 = psi.iter().map(|x| x * x).sum();
        norm_err = norm_err.max((norm_sq - s.lambda_norm_sq()).abs());

        let unit: Vec<f64> = psi.iter().map(|x| x / norm_sq.sqrt()).collect();
        let sv = schmidt_decompose(&unit, &b.part_a).unwrap().coefficients;
        let r = a.r;
        let mut amps: Vec<f64> = (0..1usize << r)
            .map(|x| mps_amplitude(&s.lambda, &bits_of(x, r)).unwrap().abs())
            .collect();
        let z = amps.iter().map(|v| v * v).sum::<f64>().sqrt();
        amps.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (i, &sigma) in sv.iter().enumerate() {
            let want = amps.get(i).map_or(0.0, |v| v / z);
            sv_err = sv_err.max((sigma - want).abs());
        }
    }
    let pass = sv_err < 1e-8 && norm_err < 1e-10;
    report(
        3,
        pass,
        &format!("singular value error {sv_err:.2e} (< 1e-8), |‖Ψ‖² − ⟨λ|λ⟩| = {norm_err:.2e} (< 1e-10)"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_variational_bound() {
    let cfg = TrainConfig {
        eta: 0.1,
        max_steps: 300,
        ..Default::default()
    };
    let mut worst = f64::INFINITY;
    let mut count = 0;
    let instances: Vec<((Lattice, Bipartition), ModelKind, Option<f64>, usize)> = vec![
        (cell(), ModelKind::Heisenberg, None, 2),
        (cell(), ModelKind::Tim, Some(0.2), 3),
        (cell(), ModelKind::Xy, None, 1),
        (fragment(12), ModelKind::Heisenberg, None, 2),
        (fragment(12), ModelKind::Tim, Some(0.7), 1),
    ];
    for ((l, b), kind, h_x, layers) in instances {
        let h = model(&l, kind, h_x);
        let ed = ed_ground_state(&h).unwrap();
        let a = Architecture::brick_wall(&l, &b, layers, 4).unwrap();
        let (_, trace) = train(&init_state(&a, 6).unwrap(), &h, &cfg).unwrap();
        for r in &trace.records {
            worst = worst.min(r.energy_per_bond - ed.energy_per_bond);
            count += 1;
        }
    }
    let pass = worst >= -1e-9;
    report(4, pass, &format!("min E_b − E_b(ED) = {worst:.3e} over {count} recorded energies (≥ −1e-9)"));
    assert!(pass);
}

fn depth_error(layers: usize) -> f64 {
    let (l, b) = cell();
    let h = model(&l, ModelKind::Tim, Some(0.2));
    let ed = ed_ground_state(&h).unwrap();
    let a = Architecture::brick_wall(&l, &b, layers, 4).unwrap();
    let (_, trace) = train(&init_state(&a, 1).unwrap(), &h, &TrainConfig::default()).unwrap();
    trace.final_energy_per_bond().unwrap() - ed.energy_per_bond
}

#[test]
fn criterion_05_depth_convergence() {
    let eps: Vec<f64> = [0, 2, 4].iter().map(|&n| depth_error(n)).collect();
    let pass = eps[2] < eps[1] && eps[1] < eps[0] && eps[2] < 1e-2;
    report(
        5,
        pass,
        &format!("ε(0) = {:.3e}, ε(2) = {:.3e}, ε(4) = {:.3e} (strictly decreasing, ε(4) < 1e-2)", eps[0], eps[1], eps[2]),
    );
    assert!(pass);
}

#[test]
fn criterion_06_spectrum_match() {
    let (l, b) = fragment(10);
    let h = model(&l, ModelKind::Tim, Some(0.7));
    let ed = ed_ground_state(&h).unwrap();
    let exact = schmidt_decompose(&ed.vector, &b.part_a).unwrap();
    let a = Architecture::brick_wall(&l, &b, 6, 4).unwrap();
    let cfg = TrainConfig {
        eta: 0.2,
        max_steps: 30_000,
        lambda_scale: 0.1,
        ..Default::default()
    };
    let (state, _) = train(&init_state(&a, 1).unwrap(), &h, &cfg).unwrap();
    let top = top_k_schmidt(&state.lambda, 5).unwrap();
    let d_gamma = top
        .iter()
        .zip(&exact.coefficients)
        .map(|((_, g), e)| (g - e).abs())
        .fold(0.0f64, f64::max);
    let gamma: Vec<f64> = exact_distribution(&state.lambda).unwrap().iter().map(|p| p.sqrt()).collect();
    let d_ee = (entanglement_entropy(&gamma) - exact.entropy()).abs();
    let pass = d_gamma < 2e-2 && d_ee < 5e-2;
    report(6, pass, &format!("max |Δγ| over top 5 = {d_gamma:.3e} (< 2e-2), |ΔEE| = {d_ee:.3e} bits (< 5e-2)"));
    assert!(pass);
}

#[test]
fn criterion_07_bond_dimension_saturation() {
    let (l, b) = fragment(12);
    let h = model(&l, ModelKind::Heisenberg, None);
    let cfg = TrainConfig {
        eta: 0.2,
        max_steps: 10_000,
        lambda_scale: 0.1,
        ..Default::default()
    };
    let e: Vec<f64> = [1, 3, 5]
        .iter()
        .map(|&chi| {
            let a = Architecture::brick_wall(&l, &b, 4, chi).unwrap();
            let (_, trace) = train(&init_state(&a, 3).unwrap(), &h, &cfg).unwrap();
            trace.final_energy_per_bond().unwrap()
        })
        .collect();
    let d53 = (e[2] - e[1]).abs();
    let d31 = (e[1] - e[0]).abs();
    let pass = d53 < 1e-3 && d53 <= d31;
    report(
        7,
        pass,
        &format!("E_b(χ=1,3,5) = {:.6}, {:.6}, {:.6}; |ΔE(5,3)| = {d53:.2e} (< 1e-3, ≤ |ΔE(3,1)| = {d31:.2e})", e[0], e[1], e[2]),
    );
    assert!(pass);
}

/// Energy per bond of the middle cell of a finite chain built from `state`.
fn middle_cell_energy(state: &schmidt_tns::schmidt::SchmidtTns, cells: usize, kind: ModelKind, h_x: Option<f64>) -> f64 {
    let chain = state.finite_chain(cells).unwrap();
    let (lf, _) = build_zpaf(cells, Boundary::Open).unwrap();
    let h = model(&lf, kind, h_x);
    let lo = (cells / 2) * 9;
    let obs: Vec<Observable> = Observable::terms_of(&h)
        .into_iter()
        .filter(|o| o.factors[0].sites[0] >= lo && o.factors[0].sites[0] < lo + 9)
        .collect();
    let (li, _) = build_zpaf(1, Boundary::Infinite).unwrap();
    let ev = Evaluator::new(&chain.arch, &obs, li.edge_count(), DEFAULT_MEMORY_CAP).unwrap();
    ev.evaluate(&chain, None).unwrap().energy_per_bond
}

#[test]
fn criterion_08_infinite_consistency() {
    let (l, b) = build_zpaf(1, Boundary::Infinite).unwrap();
    let mut worst = 0.0f64;
    let mut series = Vec::new();
    for (kind, h_x, layers, chi, seed) in [(ModelKind::Heisenberg, None, 2, 2, 21), (ModelKind::Tim, Some(0.4), 1, 3, 5)] {
        let a = Architecture::translational(&l, &b, layers, chi).unwrap();
        let s = init_state(&a, seed).unwrap();
        let inf = infinite_energy(&s, &model(&l, kind, h_x)).unwrap().energy_per_bond;
        let res: Vec<f64> = [8, 16, 32].iter().map(|&k| (middle_cell_energy(&s, k, kind, h_x) - inf).abs()).collect();
        series.push(format!("{:.1e}/{:.1e}/{:.1e}", res[0], res[1], res[2]));
        worst = worst.max(res[2]);
    }
    let pass = worst < 1e-6;
    report(
        8,
        pass,
        &format!(
            "max |e_inf − e_mid(32 cells)| = {worst:.2e} (< 1e-6); residuals at 8/16/32 cells: {}",
            series.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_sampler_fidelity() {
    let r = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dims = open_bond_dims(r, 4);
    let lambda: Vec<Parameter> = (0..r)
        .map(|m| {
            let shape = vec![2, dims[m], dims[m + 1]];
            let data = (0..shape.iter().product()).map(|_| rng.gen_range(0.1..1.0)).collect();
            Parameter::new(Tensor::new(shape, LAMBDA_AXES.to_vec(), data).unwrap(), ParamKind::SquaredPositive)
        })
        .collect();
    let batch = sample(&lambda, 100_000, 5).unwrap();
    let rep = validate(&batch, &lambda).unwrap();
    let pass = rep.total_variation < 0.02 && rep.impossible == 0;
    report(9, pass, &format!("TV = {:.4} over 1e5 samples (< 0.02)", rep.total_variation));
    assert!(pass);
}

/// Stretch goal: needs the true two-dimensional geometry of the reference
/// lattice, which is not available. Reports what the reconstructed lattice
/// gives and never fails.
#[test]
fn criterion_10_reference_table_stretch() {
    let (l, _) = build_zpaf(2, Boundary::Open).unwrap();
    let ed = ed_ground_state(&model(&l, ModelKind::Heisenberg, None)).unwrap();
    let target = -0.3842125;
    let met = (ed.energy_per_bond - target).abs() < 1e-6;
    line(&format!(
        "criterion 10: {} (stretch, not binding) N = 18 ED E_b = {:.7} vs reference {target}; reconstructed lattice, true geometry file unavailable",
        if met { "PASS" } else { "NOT MET" },
        ed.energy_per_bond
    ));
}
