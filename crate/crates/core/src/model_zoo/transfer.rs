use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{HeadTask, Network};

/// Outcome of copying parameters from one network into another.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Copied: same name and shape in both networks.
    pub transferred: Vec<String>,
    /// Present in the source but not copied (shape mismatch, head of a
    /// different task, or absent from the target).
    pub skipped: Vec<String>,
    /// Present in the target with no usable source counterpart; they keep
    /// their fresh initialization.
    pub missing: Vec<String>,
}

impl TransferReport {
    pub fn fraction_transferred(&self, total: usize) -> f64 {
        self.transferred.len() as f64 / total.max(1) as f64
    }
}

/// Replaces the final projection with a freshly initialized head for
/// `task`. Segmentation heads emit one probability channel; regression
/// heads emit `out_channels` unbounded values. Every other parameter is
/// left untouched.
pub fn replace_head(net: Network, task: HeadTask, seed: u64) -> Result<Network> {
    if !net.spec().is_generator() {
        return Err(Error::Spec(format!(
            "{}: only generator heads can be replaced",
            net.spec().name
        )));
    }
    let channels = match task {
        HeadTask::Segmentation => 1,
        HeadTask::Regression => net.spec().out_channels,
    };
    let mut net = net;
    net.set_head(task, channels, seed)?;
    Ok(net)
}

/// Copies every name- and shape-matching parameter of `source` into
/// `target`. Head parameters are only copied between heads of the same task.
pub fn transfer_weights(source: &Network, target: Network) -> Result<(Network, TransferReport)> {
    if source.spec().family != target.spec().family {
        return Err(Error::Transfer(format!(
            "family mismatch: {:?} source cannot initialize a {:?} target",
            source.spec().family,
            target.spec().family
        )));
    }
    let same_head = source.head_task() == target.head_task();
    let mut report = TransferReport::default();
    for (name, dst) in target.params() {
        let head_blocked = target.is_head_param(name) && !same_head;
        match source.params().get(name) {
            Some(src) if src.dims() == dst.dims() && !head_blocked => {
                dst.set(src.as_tensor())?;
                report.transferred.push(name.clone());
            }
            _ => report.missing.push(name.clone()),
        }
    }
    for name in source.params().keys() {
        if !report.transferred.contains(name) {
            report.skipped.push(name.clone());
        }
    }
    if report.transferred.is_empty() {
        return Err(Error::Transfer(format!(
            "no parameter of {} matches {} by name and shape",
            source.spec().name,
            target.spec().name
        )));
    }
    Ok((target, report))
}

impl HeadTask {
    pub fn name(&self) -> &'static str {
        match self {
            HeadTask::Segmentation => "segmentation",
            HeadTask::Regression => "regression",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{build_generator, ModelSpec};
    use candle_core::Tensor;

    fn unet() -> Network {
        build_generator(&ModelSpec::preset("U-Net_2_44").unwrap(), 7).unwrap()
    }

    fn x() -> Tensor {
        let data: Vec<f32> = (0..2 * 32 * 32).map(|i| ((i * 13 % 29) as f32) / 7.0 - 2.0).collect();
        Tensor::from_vec(data, (2, 1, 32, 32), &crate::device()).unwrap()
    }

    #[test]
    fn identical_specs_transfer_everything() {
        let src = unet();
        let dst = build_generator(src.spec(), 99).unwrap();
        let total = dst.params().len();
        let (dst, report) = transfer_weights(&src, dst).unwrap();
        assert_eq!(report.transferred.len(), total);
        assert!(report.skipped.is_empty() && report.missing.is_empty());
        assert_eq!(src.param_digest().unwrap(), dst.param_digest().unwrap());
    }

    #[test]
    fn segmentation_variant_gets_all_but_head() {
        let src = unet();
        let dst = replace_head(build_generator(src.spec(), 1).unwrap(), HeadTask::Segmentation, 1).unwrap();
        let (dst, report) = transfer_weights(&src, dst).unwrap();
        assert_eq!(report.missing, vec!["head.bias".to_string(), "head.weight".to_string()]);
        assert_eq!(report.transferred.len(), dst.params().len() - 2);
        for name in &report.transferred {
            let a = src.params()[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = dst.params()[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b, "{name}");
        }
        let (_, ta) = src.forward_trace(&x()).unwrap();
        let (_, tb) = dst.forward_trace(&x()).unwrap();
        for ((na, a), (nb, b)) in ta.iter().zip(tb.iter()) {
            assert_eq!(na, nb);
            let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert!(diff <= 1e-6, "{na}: {diff}");
        }
    }

    #[test]
    fn unet_to_hrnet_is_an_error() {
        let src = unet();
        let dst = build_generator(&ModelSpec::preset("HRNet").unwrap(), 0).unwrap();
        assert!(matches!(transfer_weights(&src, dst), Err(Error::Transfer(_))));
    }

    #[test]
    fn replace_head_keeps_body_bitwise() {
        let net = unet();
        let before = net.snapshot().unwrap();
        let seg = replace_head(net, HeadTask::Segmentation, 5).unwrap();
        for (name, t) in &before {
            if name.starts_with("head.") {
                continue;
            }
            let a = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = seg.params()[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b);
        }
        let p = seg.forward(&x()).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn replace_head_reinitializes() {
        let net = replace_head(unet(), HeadTask::Regression, 1).unwrap();
        let w1 = net.params()["head.weight"].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let net = replace_head(net, HeadTask::Regression, 2).unwrap();
        let w2 = net.params()["head.weight"].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_ne!(w1, w2);
        let net = replace_head(net, HeadTask::Regression, 1).unwrap();
        let w3 = net.params()["head.weight"].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(w1, w3);
    }

    #[test]
    fn regression_head_is_finite() {
        let net = replace_head(unet(), HeadTask::Regression, 3).unwrap();
        let big = (x() * 1e3).unwrap();
        let y = net.forward(&big).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unknown_task_tag_is_an_error() {
        assert!("classification".parse::<HeadTask>().is_err());
    }
}
