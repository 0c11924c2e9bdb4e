use super::{Gradients, Model, Real, Tensor};

/// `lr0 / divisor^epoch`.
pub fn lr_schedule(epoch: usize, lr0: f64, divisor: f64) -> f64 {
    lr0 / divisor.powi(epoch as i32)
}

/// `p ← p − lr·g` on one tensor.
pub fn sgd_update<T: Real>(param: &mut Tensor<T>, grad: &Tensor<T>, lr: T) {
    assert_eq!(param.shape(), grad.shape(), "parameter/gradient shape mismatch");
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p = *p - lr * g;
    }
}

/// Plain SGD over the components flagged trainable in `grads`; frozen ones
/// are left bit-identical.
pub fn sgd_step<T: Real>(model: &mut Model<T>, grads: &Gradients<T>, lr: T) {
    let flags = grads.trainable;
    if flags.original {
        for (p, g) in model.original.convs.iter_mut().zip(&grads.original.convs) {
            sgd_update(&mut p.weight, &g.weight, lr);
            sgd_update(&mut p.bias, &g.bias, lr);
        }
    }
    if flags.augmented {
        if let (Some(m), Some(g)) = (model.augmented.as_mut(), grads.augmented.as_ref()) {
            for (p, g) in m.convs.iter_mut().zip(&g.convs) {
                sgd_update(&mut p.weight, &g.weight, lr);
                sgd_update(&mut p.bias, &g.bias, lr);
            }
        }
    }
    if flags.head {
        sgd_update(&mut model.head.weight, &grads.head.weight, lr);
        sgd_update(&mut model.head.bias, &grads.head.bias, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Merge, Trainable};
    use crate::rng::rng_from_seed;

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0, 0.009, 9.0), 0.009);
        assert!((lr_schedule(1, 0.009, 9.0) - 0.001).abs() < 1e-15);
        assert!((lr_schedule(2, 0.009, 9.0) - 0.009 / 81.0).abs() < 1e-15);
        assert!((lr_schedule(2, 0.009, 9.0) - 0.000_111_111).abs() < 1e-9);
    }

    #[test]
    fn scalar_update() {
        let mut p = Tensor::<f32>::new(vec![1], vec![1.0]).unwrap();
        sgd_update(&mut p, &Tensor::new(vec![1], vec![2.0]).unwrap(), 0.1);
        assert!((p.data()[0] - 0.8).abs() < 1e-7);
    }

    fn ones_like(model: &Model<f32>, trainable: Trainable) -> Gradients<f32> {
        let mut g = Gradients::zeros_like(model);
        g.trainable = trainable;
        let mut m = model.clone();
        for (_, t) in m.tensors_mut() {
            t.data_mut().fill(1.0);
        }
        g.original = m.original;
        g.augmented = m.augmented;
        g.head = m.head;
        g
    }

    #[test]
    fn zero_rate_and_frozen_components_are_untouched() {
        let mut rng = rng_from_seed(0);
        let model = Model::<f32>::dual(3, Merge::Concat, &mut rng).unwrap();

        let mut m = model.clone();
        sgd_step(&mut m, &ones_like(&model, Trainable::ALL), 0.0);
        assert_eq!(m, model);

        let mut m = model.clone();
        let g = ones_like(&model, Trainable { original: false, augmented: true, head: true });
        for _ in 0..5 {
            sgd_step(&mut m, &g, 0.01);
        }
        assert_eq!(m.original, model.original);
        assert_ne!(m.augmented, model.augmented);
        assert_ne!(m.head, model.head);

        let mut m = model.clone();
        sgd_step(&mut m, &ones_like(&model, Trainable::HEAD), 0.01);
        assert_eq!(m.original, model.original);
        assert_eq!(m.augmented, model.augmented);
    }
}
