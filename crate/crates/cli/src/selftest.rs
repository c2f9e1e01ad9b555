//! Built-in correctness suites: fast spot checks of the adjoint pairing,
//! kernel algebra, inner solvers, and network gradients, for verifying a
//! build on new hardware without pulling in the full test suite.

use mfd_core::blur::BlurOperator;
use mfd_core::deconv::{cg_solve, shrink};
use mfd_core::flow::{FlowDomain, MotionFlow};
use mfd_core::image::Raster;
use mfd_core::kernel::kernel_for;
use mfd_core::net::{loss_and_grad, loss_only, ArchSpec, LayerSpec, LossNorm, NetworkParams};
use mfd_core::synth::synth_image;
use mfd_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = (&'static str, fn() -> std::result::Result<(), String>);

pub fn selftest_cmd() -> Result<()> {
    let checks: &[Check] = &[
        ("blur adjoint pairing", adjoint_pairing),
        ("kernel mass and symmetry", kernel_algebra),
        ("conjugate gradients vs dense solve", cg_against_dense),
        ("shrinkage minimality", shrinkage_minimality),
        ("network gradients vs finite differences", gradient_check),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok   {name}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failures > 0 {
        return Err(Error::Param(format!("{failures} selftest suite(s) failed")));
    }
    println!("all {} suites passed", checks.len());
    Ok(())
}

fn random_flow(h: usize, w: usize, m: i16, rng: &mut impl Rng) -> MotionFlow {
    let mut flow = MotionFlow::constant(h, w, 0, 0).expect("static shape");
    for j in 0..h {
        for i in 0..w {
            let (u, v) = FlowDomain::fold(rng.gen_range(-m..=m), rng.gen_range(-m..=m));
            flow.set(i, j, u, v);
        }
    }
    flow
}

fn adjoint_pairing() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, w) = (12, 12);
    for trial in 0..20 {
        let flow = random_flow(h, w, 4, &mut rng);
        let op = BlurOperator::new(&flow);
        let mut x = Raster::zeros(h, w, 1);
        let mut y = Raster::zeros(h, w, 1);
        for v in x.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in y.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let hx = op.apply_raster(&x).map_err(|e| e.to_string())?;
        let hty = op.adjoint_raster(&y).map_err(|e| e.to_string())?;
        let dot = |a: &Raster, b: &Raster| -> f64 {
            a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum()
        };
        let lhs = dot(&hx, &y);
        let rhs = dot(&x, &hty);
        let nx = dot(&x, &x).sqrt();
        let ny = dot(&y, &y).sqrt();
        if (lhs - rhs).abs() > 1e-6 * nx * ny {
            return Err(format!("trial {trial}: <Hx,y>={lhs} vs <x,H'y>={rhs}"));
        }
    }
    Ok(())
}

fn kernel_algebra() -> std::result::Result<(), String> {
    for u in -4..=4i16 {
        for v in -4..=4i16 {
            let k = kernel_for(u, v);
            let mass: f64 = k.taps().iter().map(|t| t.w).sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(format!("kernel({u},{v}) mass {mass}"));
            }
            let neg = kernel_for(-u, -v);
            if k.taps() != neg.taps() {
                return Err(format!("kernel({u},{v}) differs from its negation"));
            }
        }
    }
    Ok(())
}

fn cg_against_dense() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 6;
    let m: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in 0..n {
                s += m[k * n + i] * m[k * n + j];
            }
            a[i * n + j] = s;
        }
    }
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut aug = vec![0.0; n * (n + 1)];
    for i in 0..n {
        aug[i * (n + 1)..i * (n + 1) + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        aug[i * (n + 1) + n] = b[i];
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| {
                aug[p * (n + 1) + col]
                    .abs()
                    .total_cmp(&aug[q * (n + 1) + col].abs())
            })
            .expect("non-empty range");
        for k in 0..=n {
            aug.swap(col * (n + 1) + k, piv * (n + 1) + k);
        }
        for row in col + 1..n {
            let f = aug[row * (n + 1) + col] / aug[col * (n + 1) + col];
            for k in col..=n {
                aug[row * (n + 1) + k] -= f * aug[col * (n + 1) + k];
            }
        }
    }
    let mut reference = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = aug[row * (n + 1) + n];
        for k in row + 1..n {
            s -= aug[row * (n + 1) + k] * reference[k];
        }
        reference[row] = s / aug[row * (n + 1) + row];
    }

    let out = cg_solve(
        |v| {
            (0..n)
                .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
                .collect()
        },
        &b,
        &vec![0.0; n],
        1e-14,
        100,
    )
    .map_err(|e| e.to_string())?;
    for (i, (x, r)) in out.x.iter().zip(&reference).enumerate() {
        if (x - r).abs() > 1e-8 {
            return Err(format!("component {i}: cg {x} vs dense {r}"));
        }
    }
    Ok(())
}

fn shrinkage_minimality() -> std::result::Result<(), String> {
    let penalty = |z: f64, alpha: f64, beta: f64, g: f64| {
        z.abs().powf(alpha) + beta * (z - g) * (z - g)
    };
    for alpha in [1.0, 2.0 / 3.0, 0.5] {
        for (g, beta) in [(0.1, 8.0), (1.0, 1.0), (3.0, 64.0)] {
            let z = shrink(g, alpha, beta);
            let fz = penalty(z, alpha, beta, g);
            for k in 0..=2000 {
                let cand = g * k as f64 / 2000.0;
                if penalty(cand, alpha, beta, g) < fz - 1e-9 {
                    return Err(format!(
                        "alpha={alpha} g={g} beta={beta}: F({cand}) beats F({z})"
                    ));
                }
            }
        }
    }
    Ok(())
}

fn gradient_check() -> std::result::Result<(), String> {
    let domain = FlowDomain::new(1, 1).expect("static domain");
    let arch = ArchSpec {
        input_channels: 3,
        domain: domain.clone(),
        layers: vec![
            LayerSpec::Conv {
                size: 3,
                c_in: 3,
                c_out: 6,
                relu: true,
            },
            LayerSpec::Conv {
                size: 1,
                c_in: 6,
                c_out: domain.label_count(),
                relu: false,
            },
        ],
    };
    let params = NetworkParams::init(arch, 3).map_err(|e| e.to_string())?;
    let img = synth_image(8, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let flow = random_flow(8, 8, 1, &mut rng);

    let (_, grads) = loss_and_grad(&params, &img, &flow, LossNorm::PerPixel)
        .map_err(|e| e.to_string())?;
    let h = 1e-5;
    for layer in 0..params.layers.len() {
        for _ in 0..6 {
            let k = rng.gen_range(0..params.layers[layer].w.len());
            let mut plus = params.clone();
            plus.layers[layer].w[k] += h;
            let mut minus = params.clone();
            minus.layers[layer].w[k] -= h;
            let lp = loss_only(&plus, &img, &flow, LossNorm::PerPixel)
                .map_err(|e| e.to_string())?;
            let lm = loss_only(&minus, &img, &flow, LossNorm::PerPixel)
                .map_err(|e| e.to_string())?;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[layer].w[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            if rel > 1e-5 {
                return Err(format!(
                    "layer {layer} weight {k}: fd {fd} vs analytic {an} (rel {rel:.2e})"
                ));
            }
        }
    }
    Ok(())
}
