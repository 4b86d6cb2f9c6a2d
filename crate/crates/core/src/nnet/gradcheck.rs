//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Module;
use super::tensor::Tensor4;
use crate::error::Result;

/// Denominator floor for the relative error of near-zero gradients.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, e.g. `enc0.conv.weight[17]` or `input[3]`.
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy)]
enum Coord {
    Param(usize, usize),
    Input(usize),
}

fn projected_loss<M: Module>(m: &mut M, x: &Tensor4, r: &[f64], train: bool) -> Result<f64> {
    let y = m.forward(x, train)?;
    Ok(y.data.iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Compares analytic and central-difference gradients of `sum(forward(x) * R)` for
/// a fixed random projection `R`, over at most `max_coords` coordinates drawn
/// from every parameter tensor and the input (each tensor gets at least one).
pub fn grad_check<M: Module>(
    module: &mut M,
    input: &Tensor4,
    max_coords: usize,
    h: f64,
    seed: u64,
    train: bool,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    module.zero_grad();
    let y = module.forward(input, train)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Tensor4::new(y.dims, r.clone())?;
    let dx = module.backward(&dy)?;

    let sizes: Vec<usize> = module.params_mut().iter().map(|p| p.data.len()).collect();
    let names: Vec<String> = module.params_mut().iter().map(|p| p.name.clone()).collect();
    let mut coords = Vec::new();
    for (pi, &n) in sizes.iter().enumerate() {
        if coords.len() < max_coords {
            coords.push(Coord::Param(pi, rng.random_range(0..n)));
        }
    }
    if coords.len() < max_coords {
        coords.push(Coord::Input(rng.random_range(0..input.len())));
    }
    let total: usize = sizes.iter().sum::<usize>() + input.len();
    let extra = max_coords.saturating_sub(coords.len()).min(total);
    for flat in sample(&mut rng, total, extra).into_iter() {
        let mut rest = flat;
        let mut chosen = Coord::Input(0);
        let mut found = false;
        for (pi, &n) in sizes.iter().enumerate() {
            if rest < n {
                chosen = Coord::Param(pi, rest);
                found = true;
                break;
            }
            rest -= n;
        }
        if !found {
            chosen = Coord::Input(rest);
        }
        coords.push(chosen);
    }

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut x = input.clone();
    for c in coords {
        let (analytic, numeric, label) = match c {
            Coord::Param(pi, i) => {
                let analytic = module.params_mut()[pi].grad[i];
                let orig = module.params_mut()[pi].data[i];
                module.params_mut()[pi].data[i] = orig + h;
                let up = projected_loss(module, &x, &r, train)?;
                module.params_mut()[pi].data[i] = orig - h;
                let dn = projected_loss(module, &x, &r, train)?;
                module.params_mut()[pi].data[i] = orig;
                (analytic, (up - dn) / (2.0 * h), format!("{}[{i}]", names[pi]))
            }
            Coord::Input(i) => {
                let orig = x.data[i];
                x.data[i] = orig + h;
                let up = projected_loss(module, &x, &r, train)?;
                x.data[i] = orig - h;
                let dn = projected_loss(module, &x, &r, train)?;
                x.data[i] = orig;
                (dx.data[i], (up - dn) / (2.0 * h), format!("input[{i}]"))
            }
        };
        let e = relative_error(analytic, numeric);
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = label;
        }
        report.checked += 1;
    }
    Ok(report)
}
