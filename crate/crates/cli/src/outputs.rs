//! CSV emission with deterministic formatting (identical runs produce
//! byte-identical files).

use std::fs;
use std::path::Path;

use mtseg_core::diagnostics::Spectrum;
use mtseg_core::metrics::ConfusionMatrix;
use mtseg_core::trainer::LossBundle;

use crate::{CliError, Result};

fn fmt(v: f64) -> String {
    format!("{v:.9e}")
}

fn opt(v: Option<f32>) -> String {
    v.map(|x| fmt(x as f64)).unwrap_or_default()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// `iter,ce_source,ce_target,adv,sim,lr_fc,lr_ds`; absent losses leave their
/// field empty.
pub fn loss_csv(log: &[(u64, LossBundle)], lrs: impl Fn(u64) -> (f64, f64)) -> String {
    let mut out = String::from("iter,ce_source,ce_target,adv,sim,lr_fc,lr_ds\n");
    for (iter, b) in log {
        let (lr_fc, lr_ds) = lrs(*iter);
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            iter,
            fmt(b.ce_source as f64),
            opt(b.ce_target),
            opt(b.adv),
            opt(b.sim),
            fmt(lr_fc),
            fmt(lr_ds)
        ));
    }
    out
}

/// `class,iou` rows (empty for classes with undefined IoU) and a `mIoU`
/// footer.
pub fn metrics_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("class,iou\n");
    for (c, iou) in cm.iou().iter().enumerate() {
        out.push_str(&format!(
            "{},{}\n",
            c,
            iou.map(fmt).unwrap_or_default()
        ));
    }
    let miou = cm.miou(None).map(fmt).unwrap_or_default();
    out.push_str(&format!("mIoU,{miou}\n"));
    out
}

/// `iter,change` per trace.
pub fn trace_csv(iterations: &[u64], changes: &[f32]) -> String {
    let mut out = String::from("iter,change\n");
    // change[i] spans iterations[i] -> iterations[i+1]; indexed by the later.
    for (i, &c) in changes.iter().enumerate() {
        out.push_str(&format!("{},{}\n", iterations[i + 1], fmt(c as f64)));
    }
    out
}

/// `freq,category,amplitude` over centered bins.
pub fn spectrum_csv(spectra: &[(String, &Spectrum)]) -> String {
    let mut out = String::from("freq,category,amplitude\n");
    for (category, sp) in spectra {
        for (f, a) in sp.centered() {
            out.push_str(&format!("{f},{category},{}\n", fmt(a)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mtseg_core::diagnostics::dft;

    #[test]
    fn loss_csv_schema_and_empty_fields() {
        let b = LossBundle {
            ce_source: 1.0,
            ce_target: None,
            adv: Some(0.5),
            sim: None,
            gen_adv: None,
            variant: mtseg_core::trainer::AdvVariant::Bin,
        };
        let csv = loss_csv(&[(3, b)], |_| (1e-4, 2e-4));
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "iter,ce_source,ce_target,adv,sim,lr_fc,lr_ds");
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[0], "3");
        assert!(fields[2].is_empty());
        assert!(fields[4].is_empty());
    }

    #[test]
    fn spectrum_csv_has_centered_bins() {
        let sp = dft(&[1.0, 0.0, -1.0, 0.0]).unwrap();
        let csv = spectrum_csv(&[("change".into(), &sp)]);
        assert!(csv.contains("\n-2,change,"));
        assert!(csv.contains("\n2,change,"));
        assert!(csv.contains("\n0,change,"));
    }
}
