//! Self-checks run by `scl verify`. Each check compares library output with
//! an oracle coded here from first principles.

use std::io::Write;

use scl_core::contrastive::{nt_xent_batch_loss, nt_xent_loss_and_gradient, nt_xent_pair_loss, ContrastiveBatch};
use scl_core::image::Image;
use scl_core::metrics::{accuracy, auc, ConfusionCounts};
use scl_core::nn::arch::{count_parameters, reduction_ratio, resnet18_descriptor, Dimensionality};
use scl_core::nn::checkpoint::{decode_tensors, encode_tensors};
use scl_core::nn::{ContrastiveModel, Matrix, ModelDims};
use scl_core::rng::{self, Rng};
use scl_core::spiral::{build_schedule, spiral_transform, trilinear_sample, OobPolicy, SpiralConfig};
use scl_core::volume::Volume3D;

use crate::CliResult;

struct Check {
    name: &'static str,
    run: fn(&mut Rng) -> Result<String, String>,
}

fn schedule_counts(_: &mut Rng) -> Result<String, String> {
    for m in 2..=32 {
        let cfg = SpiralConfig {
            angular_resolution: m,
            ..SpiralConfig::default()
        };
        let s = build_schedule(&cfg).map_err(|e| e.to_string())?;
        let expected = (4.0 * (m * m) as f64 / std::f64::consts::PI).round() as usize;
        let total: usize = s.planes.iter().map(|p| p.count).sum();
        if total != expected || s.directions.len() != expected {
            return Err(format!("M={m}: {total} columns, expected {expected}"));
        }
    }
    let vol = Volume3D::from_fn(8, 8, 8, |z, y, x| (z + y + x) as f32 / 24.0).map_err(|e| e.to_string())?;
    let view = spiral_transform(&vol, &SpiralConfig::default()).map_err(|e| e.to_string())?;
    if view.shape() != (92, 183) {
        return Err(format!("default view is {:?}", view.shape()));
    }
    Ok("M in 2..=32, default view 92x183".into())
}

fn corner_oracle(vol: &Volume3D, p: [f64; 3]) -> f64 {
    let (d, h, w) = vol.dims();
    let f = [p[0].floor(), p[1].floor(), p[2].floor()];
    let t = [p[0] - f[0], p[1] - f[1], p[2] - f[2]];
    let mut acc = 0.0;
    for corner in 0..8 {
        let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let idx: Vec<i64> = (0..3).map(|k| f[k] as i64 + o[k] as i64).collect();
        let inside = idx[0] >= 0
            && idx[1] >= 0
            && idx[2] >= 0
            && (idx[0] as usize) < d
            && (idx[1] as usize) < h
            && (idx[2] as usize) < w;
        let weight: f64 = (0..3).map(|k| if o[k] == 1 { t[k] } else { 1.0 - t[k] }).product();
        if inside && weight != 0.0 {
            acc += weight * vol.get(idx[0] as usize, idx[1] as usize, idx[2] as usize) as f64;
        }
    }
    acc
}

fn trilinear(rng: &mut Rng) -> Result<String, String> {
    use rand::Rng as _;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let vol = Volume3D::from_fn(6, 7, 5, |_, _, _| rng.random::<f32>()).map_err(|e| e.to_string())?;
        for _ in 0..200 {
            let p = [
                rng.random_range(0.0..5.0),
                rng.random_range(0.0..6.0),
                rng.random_range(0.0..4.0),
            ];
            let got = trilinear_sample(&vol, p, OobPolicy::ZeroFill);
            worst = worst.max((got - corner_oracle(&vol, p)).abs());
        }
    }
    if worst < 1e-6 {
        Ok(format!("max abs error {worst:.2e}"))
    } else {
        Err(format!("max abs error {worst:.2e}"))
    }
}

fn literal_pair_loss(z: &[Vec<f64>], i: usize, j: usize, tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let num = (cos(&z[i], &z[j]) / tau).exp();
    let den: f64 = (0..z.len()).filter(|&k| k != i).map(|k| (cos(&z[i], &z[k]) / tau).exp()).sum();
    -(num / den).ln()
}

fn nt_xent(rng: &mut Rng) -> Result<String, String> {
    use rand::Rng as _;
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = [2, 4, 8][trial % 3];
        let z: Vec<Vec<f64>> = (0..2 * n)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch = ContrastiveBatch::new(z.clone(), 0.5).map_err(|e| e.to_string())?;
        for i in 0..2 * n {
            let got = nt_xent_pair_loss(&batch, i, i ^ 1).map_err(|e| e.to_string())?;
            worst = worst.max((got - literal_pair_loss(&z, i, i ^ 1, 0.5)).abs());
        }
    }
    let same = ContrastiveBatch::new(vec![vec![1.0, 2.0]; 4], 0.07).map_err(|e| e.to_string())?;
    let log3 = nt_xent_batch_loss(&same).map_err(|e| e.to_string())?;
    if worst < 1e-10 && (log3 - 3f64.ln()).abs() < 1e-12 {
        Ok(format!("max abs error {worst:.2e}"))
    } else {
        Err(format!("max abs error {worst:.2e}, identical batch {log3}"))
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gradients(rng: &mut Rng) -> Result<String, String> {
    use rand::Rng as _;
    let e = |e: scl_core::Error| e.to_string();
    let mut worst: f64 = 0.0;
    let values: Vec<f64> = (0..8 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = ContrastiveBatch::from_flat(values.clone(), 5, 0.2).map_err(e)?;
    let (_, grad) = nt_xent_loss_and_gradient(&batch).map_err(e)?;
    let h = 1e-6;
    for k in 0..values.len() {
        let mut up = values.clone();
        up[k] += h;
        let mut dn = values.clone();
        dn[k] -= h;
        let lu = nt_xent_batch_loss(&ContrastiveBatch::from_flat(up, 5, 0.2).map_err(e)?).map_err(e)?;
        let ld = nt_xent_batch_loss(&ContrastiveBatch::from_flat(dn, 5, 0.2).map_err(e)?).map_err(e)?;
        worst = worst.max(rel_err(grad[k], (lu - ld) / (2.0 * h)));
    }
    let dims = ModelDims {
        view_size: 8,
        pooled_side: 4,
        hidden: 6,
        repr: 5,
        proj_hidden: 6,
        proj_out: 4,
    };
    let mut model = ContrastiveModel::new(&dims, rng).map_err(e)?;
    let pooled = Matrix::from_vec(8, 16, (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).map_err(e)?;
    let (_, grads, _) = model.contrastive_loss_and_grads(&pooled, 0.5).map_err(e)?;
    let h = 1e-5;
    for t in 0..grads.len() {
        for k in 0..grads[t].len() {
            let orig = model.params_mut()[t][k];
            model.params_mut()[t][k] = orig + h;
            let lu = model.contrastive_loss_and_grads(&pooled, 0.5).map_err(e)?.0;
            model.params_mut()[t][k] = orig - h;
            let ld = model.contrastive_loss_and_grads(&pooled, 0.5).map_err(e)?.0;
            model.params_mut()[t][k] = orig;
            worst = worst.max(rel_err(grads[t][k], (lu - ld) / (2.0 * h)));
        }
    }
    if worst < 1e-4 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

fn parameter_counts(_: &mut Rng) -> Result<String, String> {
    let p2 = count_parameters(&resnet18_descriptor(Dimensionality::TwoD, 1, false)).map_err(|e| e.to_string())?;
    let p3 = count_parameters(&resnet18_descriptor(Dimensionality::ThreeD, 1, false)).map_err(|e| e.to_string())?;
    let r = reduction_ratio(p2, p3);
    if (0.60..=0.72).contains(&r) {
        Ok(format!("2d {p2}, 3d {p3}, reduction {r:.4}"))
    } else {
        Err(format!("reduction {r:.4} outside [0.60, 0.72]"))
    }
}

fn metric_oracles(rng: &mut Rng) -> Result<String, String> {
    use rand::Rng as _;
    for _ in 0..50 {
        let n = rng.random_range(4..60);
        let labels: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { rng.random_range(0..2) }).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        if (got - wins / pairs).abs() > 1e-12 {
            return Err(format!("auc {got} vs pair count {}", wins / pairs));
        }
    }
    let c = ConfusionCounts { tp: 3, tn: 2, fp: 1, fn_: 4 };
    if accuracy(&c).map_err(|e| e.to_string())? != 0.5 {
        return Err("accuracy of 3/2/1/4 is not 0.5".into());
    }
    Ok("auc and accuracy agree".into())
}

fn formats(rng: &mut Rng) -> Result<String, String> {
    use rand::Rng as _;
    let vol = Volume3D::from_fn(3, 4, 5, |_, _, _| rng.random::<f32>()).map_err(|e| e.to_string())?;
    let back = Volume3D::from_bytes(&vol.to_bytes()).map_err(|e| e.to_string())?;
    if back != vol {
        return Err("VOL3 round trip changed the volume".into());
    }
    let img = Image::from_fn(3, 7, |r, c| (r * 7 + c) as f64 / 4.0);
    if Image::from_spim_bytes(&img.to_spim_bytes()).map_err(|e| e.to_string())? != img {
        return Err("SPIM round trip changed the image".into());
    }
    let model = ContrastiveModel::new(&ModelDims::default(), rng).map_err(|e| e.to_string())?;
    let tensors = model.tensors();
    let bytes = encode_tensors(&tensors).map_err(|e| e.to_string())?;
    if decode_tensors(&bytes).map_err(|e| e.to_string())? != tensors {
        return Err("checkpoint round trip changed tensors".into());
    }
    Ok("VOL3, SPIM and checkpoint round trips exact".into())
}

const CHECKS: &[Check] = &[
    Check { name: "spiral-schedule", run: schedule_counts },
    Check { name: "trilinear", run: trilinear },
    Check { name: "nt-xent", run: nt_xent },
    Check { name: "gradients", run: gradients },
    Check { name: "parameter-count", run: parameter_counts },
    Check { name: "metrics", run: metric_oracles },
    Check { name: "formats", run: formats },
];

/// Runs every check, printing one line each. Returns the failure count.
pub fn run_suite(out: &mut impl Write) -> CliResult<usize> {
    let mut failures = 0;
    for (i, check) in CHECKS.iter().enumerate() {
        let mut rng = rng::generator(rng::derive(0x5C1, i as u64));
        let (status, detail) = match (check.run)(&mut rng) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        writeln!(out, "{status} {} {detail}", check.name)?;
    }
    Ok(failures)
}

#[cfg(test)]
mod tests {
    #[test]
    fn suite_passes() {
        let mut buf = Vec::new();
        assert_eq!(super::run_suite(&mut buf).unwrap(), 0, "{}", String::from_utf8_lossy(&buf));
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), super::CHECKS.len());
    }
}
