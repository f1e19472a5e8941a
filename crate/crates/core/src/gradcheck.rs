//! Finite-difference verification of tape gradients.
//!
//! Central differences with step 1e-6 against the analytic backward pass, for
//! every supported primitive and for arbitrary user-supplied scalar functions
//! (used by the `gradcheck` CLI subcommand and the acceptance suite).

use crate::rng::Rng;
use crate::tape::{Tape, Var};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-6;

/// Relative error with a floor that treats near-zero pairs as agreeing.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m < 1e-8 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

/// Checks analytic gradients of `f` (a scalar function of the listed leaf
/// inputs, rebuilt on a fresh tape per evaluation) against central finite
/// differences at the given point.
pub fn check_scalar_fn(
    name: &str,
    dims: &[Vec<usize>],
    point: &[Vec<f64>],
    f: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> CheckResult {
    let eval = |data: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = dims
            .iter()
            .zip(data)
            .map(|(d, values)| tape.leaf_from(d.clone(), values.clone(), true))
            .collect();
        let loss = f(&mut tape, &vars);
        tape.data(loss)[0]
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = dims
        .iter()
        .zip(point)
        .map(|(d, values)| tape.leaf_from(d.clone(), values.clone(), true))
        .collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Vec<f64>> = point.to_vec();
    for (i, values) in point.iter().enumerate() {
        for j in 0..values.len() {
            let orig = values[j];
            work[i][j] = orig + FD_STEP;
            let plus = eval(&work);
            work[i][j] = orig - FD_STEP;
            let minus = eval(&work);
            work[i][j] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[i].get(j).copied().unwrap_or(0.0);
            max_rel = max_rel.max(relative_error(a, fd));
            checked += 1;
        }
    }
    CheckResult {
        name: name.to_string(),
        coords_checked: checked,
        max_rel_err: max_rel,
    }
}

fn sample(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn sample_positive(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(0.5, 1.5)).collect()
}

/// Keeps values away from zero so kinked ops (relu, max) are differentiable
/// at the sampled point.
fn sample_off_kink(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.uniform(0.1, 1.0);
            if rng.next_f64() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect()
}

/// Finite-difference checks for every autodiff primitive.
pub fn check_all_primitives(seed: u64) -> Vec<CheckResult> {
    let mut rng = Rng::seeded(seed);
    let mut results = Vec::new();

    // weights a reduction by fixed constants so the loss sees every output
    let reduce = |weights: Vec<f64>| {
        move |tape: &mut Tape, out: Var| {
            let w = tape.constant(vec![weights.len()], weights.clone());
            let flat = tape.reshape(out, vec![weights.len()]);
            let prod = tape.mul(flat, w);
            tape.sum(prod)
        }
    };

    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 12), sample(&mut rng, 12)];
        results.push(check_scalar_fn(
            "add",
            &[vec![3, 4], vec![3, 4]],
            &point,
            &|t, v| {
                let y = t.add(v[0], v[1]);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 12), sample(&mut rng, 4)];
        results.push(check_scalar_fn(
            "add_bias",
            &[vec![3, 4], vec![4]],
            &point,
            &|t, v| {
                let y = t.add_bias(v[0], v[1]);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 12), sample(&mut rng, 12)];
        results.push(check_scalar_fn("mul", &[vec![12], vec![12]], &point, &|t, v| {
            let y = t.mul(v[0], v[1]);
            r(t, y)
        }));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 12)];
        results.push(check_scalar_fn("scale", &[vec![12]], &point, &|t, v| {
            let y = t.scale(v[0], -1.7);
            r(t, y)
        }));
    }
    {
        let r = reduce(sample(&mut rng, 6));
        let point = vec![sample(&mut rng, 12), sample(&mut rng, 8)];
        results.push(check_scalar_fn(
            "matmul",
            &[vec![3, 4], vec![4, 2]],
            &point,
            &|t, v| {
                let y = t.matmul(v[0], v[1], false);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 6));
        let point = vec![sample(&mut rng, 12), sample(&mut rng, 8)];
        results.push(check_scalar_fn(
            "matmul_transposed",
            &[vec![3, 4], vec![2, 4]],
            &point,
            &|t, v| {
                let y = t.matmul(v[0], v[1], true);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 16), sample(&mut rng, 24)];
        results.push(check_scalar_fn(
            "matmul_batched",
            &[vec![2, 2, 4], vec![2, 4, 3]],
            &point,
            &|t, v| {
                let y = t.matmul(v[0], v[1], false);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 24));
        let point = vec![sample(&mut rng, 24)];
        results.push(check_scalar_fn("permute", &[vec![2, 3, 4]], &point, &|t, v| {
            let y = t.permute(v[0], &[2, 0, 1]);
            r(t, y)
        }));
    }
    {
        let r = reduce(sample(&mut rng, 24));
        let point = vec![sample(&mut rng, 24)];
        results.push(check_scalar_fn("reshape", &[vec![4, 6]], &point, &|t, v| {
            let y = t.reshape(v[0], vec![2, 3, 4]);
            r(t, y)
        }));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 20)];
        results.push(check_scalar_fn(
            "embedding",
            &[vec![5, 4]],
            &point,
            &|t, v| {
                let y = t.embedding(v[0], &[3, 0, 3]);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 12)];
        let allowed = vec![
            true, true, false, true, true, true, true, true, false, false, true, true,
        ];
        results.push(check_scalar_fn(
            "masked_softmax",
            &[vec![3, 4]],
            &point,
            &|t, v| {
                let y = t.masked_softmax_last(v[0], Some(&allowed));
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![
            sample(&mut rng, 12),
            sample_positive(&mut rng, 4),
            sample(&mut rng, 4),
        ];
        results.push(check_scalar_fn(
            "layer_norm",
            &[vec![3, 4], vec![4], vec![4]],
            &point,
            &|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-6);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample_off_kink(&mut rng, 12)];
        results.push(check_scalar_fn("relu", &[vec![12]], &point, &|t, v| {
            let y = t.relu(v[0]);
            r(t, y)
        }));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample_positive(&mut rng, 12)];
        results.push(check_scalar_fn("log", &[vec![12]], &point, &|t, v| {
            let y = t.log(v[0]);
            r(t, y)
        }));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 12)];
        results.push(check_scalar_fn("exp", &[vec![12]], &point, &|t, v| {
            let y = t.exp(v[0]);
            r(t, y)
        }));
    }
    {
        let point = vec![sample(&mut rng, 12)];
        let mask = vec![
            true, false, true, true, false, true, true, true, false, true, false, true,
        ];
        results.push(check_scalar_fn(
            "masked_sum",
            &[vec![12]],
            &point,
            &|t, v| t.masked_sum(v[0], &mask),
        ));
    }
    {
        let r = reduce(sample(&mut rng, 3));
        let point = vec![sample_off_kink(&mut rng, 12)];
        results.push(check_scalar_fn("max_reduce", &[vec![3, 4]], &point, &|t, v| {
            let y = t.max_last(v[0]);
            r(t, y)
        }));
    }
    {
        let r = reduce(sample(&mut rng, 6));
        let point = vec![sample(&mut rng, 24)];
        let mask = vec![true, false, true, true, true, false, false, true];
        results.push(check_scalar_fn(
            "masked_mean_rows",
            &[vec![2, 4, 3]],
            &point,
            &|t, v| {
                let y = t.masked_mean_rows(v[0], &mask);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample_off_kink(&mut rng, 12)];
        results.push(check_scalar_fn(
            "power_normalize",
            &[vec![12]],
            &point,
            &|t, v| {
                let y = t.power_normalize(v[0]);
                r(t, y)
            },
        ));
    }
    {
        let r = reduce(sample(&mut rng, 12));
        let point = vec![sample(&mut rng, 12)];
        let coeffs = vec![(0.8, -0.4), (-1.1, 0.3), (0.2, 0.9)];
        results.push(check_scalar_fn(
            "complex_group_scale",
            &[vec![12]],
            &point,
            &|t, v| {
                let y = t.complex_group_scale(v[0], &coeffs, 2);
                r(t, y)
            },
        ));
    }
    {
        let point = vec![sample(&mut rng, 15)];
        let targets = vec![2, 0, 4];
        let mask = vec![true, false, true];
        results.push(check_scalar_fn(
            "cross_entropy",
            &[vec![3, 5]],
            &point,
            &|t, v| t.cross_entropy_mean(v[0], &targets, &mask),
        ));
    }

    results
}

/// Random three-layer perceptron with 17 differentiable scalars (weights,
/// biases and the input vector), checked end to end.
pub fn check_small_mlp(seed: u64) -> CheckResult {
    let mut rng = Rng::seeded(seed);
    let point = vec![
        sample(&mut rng, 2),  // x
        sample(&mut rng, 4),  // w1 2x2
        sample(&mut rng, 2),  // b1
        sample(&mut rng, 4),  // w2 2x2
        sample(&mut rng, 2),  // b2
        sample(&mut rng, 2),  // w3 2x1
        sample(&mut rng, 1),  // b3
    ];
    let dims = vec![
        vec![1, 2],
        vec![2, 2],
        vec![2],
        vec![2, 2],
        vec![2],
        vec![2, 1],
        vec![1],
    ];
    check_scalar_fn("mlp_17_params", &dims, &point, &|t, v| {
        let h1 = t.matmul(v[0], v[1], false);
        let h1 = t.add_bias(h1, v[2]);
        let h1 = t.relu(h1);
        let h2 = t.matmul(h1, v[3], false);
        let h2 = t.add_bias(h2, v[4]);
        let h2 = t.relu(h2);
        let out = t.matmul(h2, v[5], false);
        let out = t.add_bias(out, v[6]);
        t.sum(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_primitives_pass_fd() {
        for result in check_all_primitives(0xFD) {
            assert!(
                result.passed(),
                "{} failed: max rel err {:.3e} over {} coords",
                result.name,
                result.max_rel_err,
                result.coords_checked
            );
        }
    }

    #[test]
    fn mlp_17_params_passes_fd() {
        let result = check_small_mlp(0x17);
        assert_eq!(result.coords_checked, 17);
        assert!(result.passed(), "max rel err {:.3e}", result.max_rel_err);
    }
}
