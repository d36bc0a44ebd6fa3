//! Evaluation metrics: RMSE, gradient-magnitude RMSE, per-scale error
//! curves and multi-model comparison reports.
//!
//! The per-scale curve uses fine-scale extraction H_s = identity - G_s
//! (along-track): e(s) = RMS(H_s(est - truth)) / RMS(H_s(truth)). With
//! this reading an interpolated product's curve decreases toward large s
//! (its error lives at the fine scales), while structured instrument
//! errors push the observation curve up at large s. A low-pass variant
//! (G_s directly) is available behind [`ScaleMode`].

use serde::Deserialize;

use crate::error::{Result, SwotError};
use crate::scale_space::{decompose, gaussian_blur_along, ScaleList};
use crate::swath::{swath_gradient, SwathField};
use crate::training::CalSample;

/// Root mean square difference over all swath pixels, meters.
pub fn rmse(a: &SwathField, b: &SwathField) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(SwotError::Data("rmse: swath grids do not match".into()));
    }
    let n = a.values().len() as f64;
    let se: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((se / n).sqrt())
}

/// RMSE between gradient magnitudes sqrt(d_al^2 + d_ac^2), m/km.
pub fn grad_rmse(a: &SwathField, b: &SwathField) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(SwotError::Data("grad_rmse: swath grids do not match".into()));
    }
    let (a_al, a_ac) = swath_gradient(a);
    let (b_al, b_ac) = swath_gradient(b);
    let n = a.values().len() as f64;
    let mut se = 0.0;
    for i in 0..a.values().len() {
        let ma = (a_al.values()[i].powi(2) + a_ac.values()[i].powi(2)).sqrt();
        let mb = (b_al.values()[i].powi(2) + b_ac.values()[i].powi(2)).sqrt();
        se += (ma - mb) * (ma - mb);
    }
    Ok((se / n).sqrt())
}

/// Which part of the signal the per-scale metric extracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// identity - G_sigma: everything finer than sigma (default).
    HighPass,
    /// G_sigma: everything coarser than sigma.
    LowPass,
}

/// Normalized error as a function of blur scale, pooled over sample pairs:
/// e(s) = RMS(H_s(est - truth)) / RMS(H_s(truth)).
pub fn error_vs_scale_pooled(
    pairs: &[(&SwathField, &SwathField)],
    sigma_grid: &ScaleList,
    mode: ScaleMode,
) -> Result<Vec<(f64, f64)>> {
    if pairs.is_empty() {
        return Err(SwotError::Data("error_vs_scale: empty sample set".into()));
    }
    let mut out = Vec::with_capacity(sigma_grid.n_scales());
    for &sigma in sigma_grid.sigmas_km() {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut truth_total = 0.0;
        for (est, truth) in pairs {
            if est.grid() != truth.grid() {
                return Err(SwotError::Data("error_vs_scale: grids do not match".into()));
            }
            let diff = est.zip_with(truth, |a, b| a - b)?;
            let extract = |f: &SwathField| -> Result<Vec<f64>> {
                let blurred = gaussian_blur_along(f, sigma)?;
                Ok(match mode {
                    ScaleMode::HighPass => f
                        .values()
                        .iter()
                        .zip(blurred.values())
                        .map(|(v, b)| v - b)
                        .collect(),
                    ScaleMode::LowPass => blurred.into_values(),
                })
            };
            for v in extract(&diff)? {
                num += v * v;
            }
            for v in extract(truth)? {
                den += v * v;
            }
            truth_total += truth.values().iter().map(|v| v * v).sum::<f64>();
        }
        // a denominator at rounding-residue level means the truth carries no
        // signal at this scale (e.g. a constant field): the ratio is undefined
        if den <= 1e-20 * truth_total.max(f64::MIN_POSITIVE) {
            return Err(SwotError::Numeric(format!(
                "error_vs_scale: truth has no variance at sigma {sigma} km"
            )));
        }
        out.push((sigma, (num / den).sqrt()));
    }
    Ok(out)
}

/// Single-pair convenience.
pub fn error_vs_scale(
    est: &SwathField,
    truth: &SwathField,
    sigma_grid: &ScaleList,
) -> Result<Vec<(f64, f64)>> {
    error_vs_scale_pooled(&[(est, truth)], sigma_grid, ScaleMode::HighPass)
}

/// One evaluated candidate: predictions aligned with the evaluation set.
pub struct EvalEntry {
    pub name: String,
    pub preds: Vec<SwathField>,
}

/// Per-scale row: normalized error of the raw observation, the gridded
/// product and one calibrated candidate at a given blur scale.
#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct PerScaleRow {
    pub sigma_km: f64,
    pub err_obs: f64,
    pub err_gridded: f64,
    pub err_calibrated: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub rmse_m: f64,
    pub rmse_grad: f64,
    pub per_scale: Vec<PerScaleRow>,
    /// Band variance fractions of the corrupted observation before and
    /// after batch rescaling (rescale statistics from the even-indexed
    /// samples, variances measured on the odd-indexed samples).
    pub band_variance_pre: Vec<f64>,
    pub band_variance_post: Vec<f64>,
    pub meta: ReportMeta,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub n_samples: usize,
}

/// Pooled RMSE of a prediction list against the matching truths.
fn pooled_rmse(preds: &[SwathField], eval_set: &[CalSample]) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for (p, s) in preds.iter().zip(eval_set) {
        if p.grid() != s.truth.grid() {
            return Err(SwotError::Data("compare: prediction grid mismatch".into()));
        }
        se += p
            .values()
            .iter()
            .zip(s.truth.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        n += p.values().len();
    }
    Ok((se / n as f64).sqrt())
}

fn pooled_grad_rmse(preds: &[SwathField], eval_set: &[CalSample]) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for (p, s) in preds.iter().zip(eval_set) {
        let (p_al, p_ac) = swath_gradient(p);
        let (t_al, t_ac) = swath_gradient(&s.truth);
        for i in 0..p.values().len() {
            let mp = (p_al.values()[i].powi(2) + p_ac.values()[i].powi(2)).sqrt();
            let mt = (t_al.values()[i].powi(2) + t_ac.values()[i].powi(2)).sqrt();
            se += (mp - mt) * (mp - mt);
        }
        n += p.values().len();
    }
    Ok((se / n as f64).sqrt())
}

/// Band variance fractions of the observations, before and after a
/// batch-style per-band rescale. The rescale statistics come from the
/// even-indexed samples; the reported variances from the odd half, so the
/// "post" fractions are a genuine out-of-batch measurement.
pub fn observation_band_variance(
    eval_set: &[CalSample],
    scales: &ScaleList,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if eval_set.is_empty() {
        return Err(SwotError::Data("band variance: empty sample set".into()));
    }
    let n_bands = scales.n_bands();
    let mut pre = vec![0.0; n_bands];
    let mut rescale = vec![0.0; n_bands];
    let mut post = vec![0.0; n_bands];
    let mut n_pre = 0usize;
    let (mut n_even, mut n_odd) = (0usize, 0usize);
    for (i, s) in eval_set.iter().enumerate() {
        let stack = decompose(&s.obs, scales)?;
        let npix = s.obs.values().len();
        for b in 0..n_bands {
            let band = stack.band(b);
            let mean = band.iter().sum::<f64>() / npix as f64;
            let var: f64 =
                band.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / npix as f64;
            pre[b] += var * npix as f64;
            if i % 2 == 0 {
                rescale[b] += var * npix as f64;
            } else {
                post[b] += var * npix as f64;
            }
        }
        n_pre += npix;
        if i % 2 == 0 {
            n_even += npix;
        } else {
            n_odd += npix;
        }
    }
    let pre: Vec<f64> = pre.iter().map(|v| v / n_pre as f64).collect();
    let total: f64 = pre.iter().sum();
    if total <= 0.0 {
        return Err(SwotError::Numeric("band variance: all-zero observations".into()));
    }
    let pre_frac: Vec<f64> = pre.iter().map(|v| v / total).collect();
    // rescaled band b has variance var_odd[b] / var_even[b]
    let post: Vec<f64> = post
        .iter()
        .zip(rescale.iter())
        .map(|(o, e)| {
            if n_odd == 0 || *e <= 0.0 {
                1.0
            } else {
                (o / n_odd as f64) / (e / n_even as f64)
            }
        })
        .collect();
    Ok((pre_frac, post))
}

/// Evaluate candidates against the shared evaluation set. The raw
/// observation and the gridded product are always included as baseline
/// entries; reports come back sorted by RMSE (best first).
pub fn compare(
    entries: &[EvalEntry],
    eval_set: &[CalSample],
    sigma_grid: &ScaleList,
    band_scales: &ScaleList,
    config_hash: &str,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if eval_set.is_empty() {
        return Err(SwotError::Data("compare: empty evaluation set".into()));
    }
    for e in entries {
        if e.preds.len() != eval_set.len() {
            return Err(SwotError::Data(format!(
                "compare: entry '{}' has {} predictions for {} samples",
                e.name,
                e.preds.len(),
                eval_set.len()
            )));
        }
    }
    let obs: Vec<SwathField> = eval_set.iter().map(|s| s.obs.clone()).collect();
    let gridded: Vec<SwathField> = eval_set.iter().map(|s| s.gridded.clone()).collect();
    let truths: Vec<&SwathField> = eval_set.iter().map(|s| &s.truth).collect();

    let curve = |preds: &[SwathField]| -> Result<Vec<(f64, f64)>> {
        let pairs: Vec<(&SwathField, &SwathField)> =
            preds.iter().zip(truths.iter().copied()).collect();
        error_vs_scale_pooled(&pairs, sigma_grid, ScaleMode::HighPass)
    };
    let obs_curve = curve(&obs)?;
    let gridded_curve = curve(&gridded)?;
    let (band_pre, band_post) = observation_band_variance(eval_set, band_scales)?;

    let mut reports = Vec::new();
    let mut push_entry = |name: &str, preds: &[SwathField]| -> Result<()> {
        let own_curve = curve(preds)?;
        let per_scale = own_curve
            .iter()
            .zip(obs_curve.iter())
            .zip(gridded_curve.iter())
            .map(|(((sigma, own), (_, o)), (_, g))| PerScaleRow {
                sigma_km: *sigma,
                err_obs: *o,
                err_gridded: *g,
                err_calibrated: *own,
            })
            .collect();
        reports.push(EvalReport {
            name: name.to_string(),
            rmse_m: pooled_rmse(preds, eval_set)?,
            rmse_grad: pooled_grad_rmse(preds, eval_set)?,
            per_scale,
            band_variance_pre: band_pre.clone(),
            band_variance_post: band_post.clone(),
            meta: ReportMeta {
                config_hash: config_hash.to_string(),
                seed,
                n_samples: eval_set.len(),
            },
        });
        Ok(())
    };
    push_entry("obs", &obs)?;
    push_entry("gridded", &gridded)?;
    for e in entries {
        push_entry(&e.name, &e.preds)?;
    }
    reports.sort_by(|a, b| a.rmse_m.partial_cmp(&b.rmse_m).unwrap());
    Ok(reports)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_f64_list(vs: &[f64]) -> String {
    let items: Vec<String> = vs.iter().map(|v| fmt_f64(*v)).collect();
    format!("[{}]", items.join(","))
}

/// Serialize one report with a stable key order and floats at 17
/// significant digits, so identical inputs produce identical bytes.
pub fn report_to_json(r: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("{\"name\":");
    s.push_str(&serde_json::to_string(&r.name).expect("string"));
    s.push_str(",\"rmse_m\":");
    s.push_str(&fmt_f64(r.rmse_m));
    s.push_str(",\"rmse_grad\":");
    s.push_str(&fmt_f64(r.rmse_grad));
    s.push_str(",\"per_scale\":[");
    for (i, row) in r.per_scale.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!(
            "{{\"sigma_km\":{},\"err_obs\":{},\"err_gridded\":{},\"err_calibrated\":{}}}",
            fmt_f64(row.sigma_km),
            fmt_f64(row.err_obs),
            fmt_f64(row.err_gridded),
            fmt_f64(row.err_calibrated)
        ));
    }
    s.push_str("],\"band_variance_pre\":");
    s.push_str(&fmt_f64_list(&r.band_variance_pre));
    s.push_str(",\"band_variance_post\":");
    s.push_str(&fmt_f64_list(&r.band_variance_post));
    s.push_str(",\"meta\":{\"config_hash\":");
    s.push_str(&serde_json::to_string(&r.meta.config_hash).expect("string"));
    s.push_str(&format!(",\"seed\":{},\"n_samples\":{}}}", r.meta.seed, r.meta.n_samples));
    s.push('}');
    s
}

/// Serialize a report list (the `compare` output).
pub fn reports_to_json(reports: &[EvalReport]) -> String {
    let items: Vec<String> = reports.iter().map(report_to_json).collect();
    format!("[{}]", items.join(","))
}

/// Per-scale curves as CSV: sigma_km, err_obs, err_gridded, err_calibrated.
pub fn curves_to_csv(report: &EvalReport) -> String {
    let mut s = String::from("sigma_km,err_obs,err_gridded,err_calibrated\n");
    for row in &report.per_scale {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(row.sigma_km),
            fmt_f64(row.err_obs),
            fmt_f64(row.err_gridded),
            fmt_f64(row.err_calibrated)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errorsim::{gen_error_component, ErrorKind, ErrorSpec};
    use crate::rng::Rng;
    use crate::scale_space::default_scales;
    use crate::swath::build_swath_grid;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<crate::swath::SwathGrid> {
        Arc::new(build_swath_grid(n, 2.0, 10.0, 60.0).unwrap())
    }

    fn random_swath(g: &Arc<crate::swath::SwathGrid>, seed: u64) -> SwathField {
        let mut rng = Rng::new(seed);
        let mut v = vec![0.0; g.n_pixels()];
        rng.fill_normal(&mut v);
        SwathField::new(g.clone(), v).unwrap()
    }

    #[test]
    fn rmse_trivia_and_oracle() {
        let g = grid(16);
        let a = random_swath(&g, 1);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = SwathField::new(g.clone(), a.values().iter().map(|v| v + 0.01).collect()).unwrap();
        assert!((rmse(&a, &b).unwrap() - 0.01).abs() < 1e-14);
        // independent direct-summation oracle
        let c = random_swath(&g, 2);
        let mut se = 0.0;
        for i in 0..a.values().len() {
            let d = a.values()[i] - c.values()[i];
            se += d * d;
        }
        let oracle = (se / a.values().len() as f64).sqrt();
        assert!((rmse(&a, &c).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn rmse_is_a_metric() {
        let g = grid(12);
        let (a, b, c) = (random_swath(&g, 5), random_swath(&g, 6), random_swath(&g, 7));
        assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
        assert!(rmse(&a, &b).unwrap() > 0.0);
        let (ab, bc, ac) = (
            rmse(&a, &b).unwrap(),
            rmse(&b, &c).unwrap(),
            rmse(&a, &c).unwrap(),
        );
        assert!(ac <= ab + bc + 1e-12);
        // grid mismatch is an error
        let g2 = grid(13);
        let d = random_swath(&g2, 8);
        assert!(rmse(&a, &d).is_err());
    }

    #[test]
    fn grad_rmse_ignores_constant_offsets() {
        let g = grid(16);
        let a = random_swath(&g, 9);
        let b = SwathField::new(g.clone(), a.values().iter().map(|v| v + 5.0).collect()).unwrap();
        assert_eq!(grad_rmse(&a, &a).unwrap(), 0.0);
        assert!(grad_rmse(&a, &b).unwrap() < 1e-12);
        // composition oracle: swath_gradient + rmse over magnitudes
        let c = random_swath(&g, 10);
        let (aal, aac) = swath_gradient(&a);
        let (cal, cac) = swath_gradient(&c);
        let mut se = 0.0;
        for i in 0..a.values().len() {
            let ma = (aal.values()[i].powi(2) + aac.values()[i].powi(2)).sqrt();
            let mc = (cal.values()[i].powi(2) + cac.values()[i].powi(2)).sqrt();
            se += (ma - mc) * (ma - mc);
        }
        let oracle = (se / a.values().len() as f64).sqrt();
        assert!((grad_rmse(&a, &c).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn error_vs_scale_zero_when_equal_and_shift_invariant() {
        let g = grid(64);
        let truth = random_swath(&g, 11);
        let scales = default_scales(5, 16.0).unwrap();
        for (_, e) in error_vs_scale(&truth, &truth, &scales).unwrap() {
            assert_eq!(e, 0.0);
        }
        // adding the same constant to both leaves the curve unchanged
        let est = random_swath(&g, 12);
        let curve1 = error_vs_scale(&est, &truth, &scales).unwrap();
        let est2 = SwathField::new(g.clone(), est.values().iter().map(|v| v + 3.0).collect()).unwrap();
        let truth2 =
            SwathField::new(g.clone(), truth.values().iter().map(|v| v + 3.0).collect()).unwrap();
        let curve2 = error_vs_scale(&est2, &truth2, &scales).unwrap();
        for ((s1, e1), (s2, e2)) in curve1.iter().zip(curve2.iter()) {
            assert_eq!(s1, s2);
            assert!((e1 - e2).abs() < 1e-9, "{e1} vs {e2}");
        }
        // constant truth -> zero denominator -> error
        let flat = SwathField::constant(g.clone(), 1.0);
        assert!(error_vs_scale(&est, &flat, &scales).is_err());
    }

    #[test]
    fn large_scale_roll_error_grows_with_sigma() {
        // est = truth + roll (500 km correlated): fine-scale extraction sees
        // little of it at small sigma and more at large sigma
        let g = grid(512);
        let truth = random_swath(&g, 13);
        let roll = gen_error_component(
            &g,
            &ErrorSpec { kind: ErrorKind::Roll, edge_std_m: 0.5, corr_km: 500.0, seed: 3 },
        )
        .unwrap();
        let est = truth.zip_with(&roll, |t, e| t + e).unwrap();
        let scales = default_scales(20, 8.0).unwrap();
        let curve = error_vs_scale(&est, &truth, &scales).unwrap();
        let first = curve.first().unwrap().1;
        let last = curve.last().unwrap().1;
        assert!(
            last > 3.0 * first,
            "roll error should grow with sigma: e({}) = {first}, e({}) = {last}",
            curve.first().unwrap().0,
            curve.last().unwrap().0
        );
    }

    #[test]
    fn report_json_is_stable_and_round_trips() {
        let g = grid(32);
        let truth = random_swath(&g, 20);
        let obs = SwathField::new(g.clone(), truth.values().iter().map(|v| v + 0.3).collect()).unwrap();
        let gridded =
            SwathField::new(g.clone(), truth.values().iter().map(|v| 0.9 * v).collect()).unwrap();
        let eval_set = vec![
            crate::training::CalSample {
                truth: truth.clone(),
                obs: obs.clone(),
                gridded: gridded.clone(),
                bundle: None,
            },
            crate::training::CalSample { truth, obs, gridded, bundle: None },
        ];
        let entries = vec![EvalEntry {
            name: "calibrated".into(),
            preds: eval_set.iter().map(|s| s.truth.clone()).collect(),
        }];
        let sigma_grid = default_scales(4, 16.0).unwrap();
        let band_scales = default_scales(4, 8.0).unwrap();
        let reports =
            compare(&entries, &eval_set, &sigma_grid, &band_scales, "deadbeef", 7).unwrap();
        // baselines always included; ranked by rmse => perfect entry first
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0].name, "calibrated");
        assert_eq!(reports[0].rmse_m, 0.0);
        assert!(reports.iter().any(|r| r.name == "obs"));
        assert!(reports.iter().any(|r| r.name == "gridded"));

        let json1 = reports_to_json(&reports);
        let json2 = reports_to_json(&reports);
        assert_eq!(json1, json2);
        // round-trip through serde
        let parsed: Vec<EvalReport> = serde_json::from_str(&json1).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].name, "calibrated");
        assert_eq!(parsed[0].meta.config_hash, "deadbeef");
        assert_eq!(parsed[1].per_scale.len(), 4);
        // floats survive the 17-significant-digit formatting exactly
        assert_eq!(parsed[2].rmse_m.to_bits(), reports[2].rmse_m.to_bits());

        let csv = curves_to_csv(&reports[0]);
        assert!(csv.starts_with("sigma_km,err_obs,err_gridded,err_calibrated\n"));
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn compare_rejects_bad_inputs() {
        let g = grid(16);
        let truth = random_swath(&g, 30);
        let sample = crate::training::CalSample {
            truth: truth.clone(),
            obs: truth.clone(),
            gridded: truth.clone(),
            bundle: None,
        };
        let sigma_grid = default_scales(2, 16.0).unwrap();
        assert!(compare(&[], &[], &sigma_grid, &sigma_grid, "", 0).is_err());
        let entries =
            vec![EvalEntry { name: "x".into(), preds: vec![truth.clone(), truth.clone()] }];
        let eval_set = vec![sample];
        assert!(compare(&entries, &eval_set, &sigma_grid, &sigma_grid, "", 0).is_err());
    }
}
