use rand::Rng;

use crate::ops::ParamRole;
use crate::params::ParameterStore;
use crate::rng::{name_key, stream_rng, Stream};
use crate::tensor::{Scalar, Tensor};

/// Xavier-uniform weights, zero biases and shifts, unit norm scales, and
/// fresh running statistics. Each tensor draws from its own stream keyed by
/// its name, so a parameter's initial value does not depend on which other
/// networks were built.
pub fn init_parameters<T: Scalar>(store: &mut ParameterStore<T>, seed: u64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let info = store.info(id).clone();
        let shape = store.value(id).shape().to_vec();
        let value = match info.role {
            ParamRole::Weight { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream_rng(seed, Stream::Init, &[name_key(&info.name)]);
                Tensor::from_fn(&shape, |_| T::lit(rng.gen_range(-bound..bound)))
            }
            ParamRole::NormScale | ParamRole::RunningVar => Tensor::full(&shape, T::one()),
            ParamRole::Bias | ParamRole::NormShift | ParamRole::RunningMean => Tensor::zeros(&shape),
        };
        store
            .set_value(id, value)
            .expect("initial value has the registered shape");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::OwnerGroup;

    #[test]
    fn xavier_statistics() {
        let mut s = ParameterStore::<f64>::new();
        let w = s
            .register("w", OwnerGroup::C, ParamRole::Weight { fan_in: 100, fan_out: 100 }, &[100, 100])
            .unwrap();
        let b = s.register("b", OwnerGroup::C, ParamRole::Bias, &[100]).unwrap();
        init_parameters(&mut s, 7);
        let d = s.value(w).data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        let expected = (2.0f64 / 200.0).sqrt();
        assert!((std - expected).abs() / expected < 0.05, "{std}");
        assert!(s.value(b).data().iter().all(|&v| v == 0.0));
        assert!(s.is_initialized(w));
    }

    #[test]
    fn deterministic_and_name_keyed() {
        let build = |extra: bool| {
            let mut s = ParameterStore::<f32>::new();
            if extra {
                s.register("other", OwnerGroup::D, ParamRole::Weight { fan_in: 3, fan_out: 3 }, &[3, 3])
                    .unwrap();
            }
            let w = s
                .register("w", OwnerGroup::F, ParamRole::Weight { fan_in: 4, fan_out: 5 }, &[5, 4])
                .unwrap();
            init_parameters(&mut s, 11);
            s.value(w).clone()
        };
        assert_eq!(build(false), build(false));
        assert_eq!(build(false), build(true));
    }
}
