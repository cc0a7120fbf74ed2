/// Shape and name of one parameter tensor, reported in visiting order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// A container of named dense tensors with a stable visiting order.
///
/// Gradients use the same container type as the parameters they belong to,
/// so optimizer state and gradient buffers line up by position.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));
}

pub fn param_count<P: Parameters + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, _, data| n += data.len());
    n
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(p));
    p.visit("", &mut |_, _, data| out.extend_from_slice(data));
    out
}

pub fn set_from_flat<P: Parameters + ?Sized>(p: &mut P, flat: &[f64]) {
    let mut offset = 0;
    p.visit_mut(&mut |data| {
        data.copy_from_slice(&flat[offset..offset + data.len()]);
        offset += data.len();
    });
    assert_eq!(offset, flat.len(), "flat parameter length mismatch");
}

pub fn zeroed<P: Parameters + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.visit_mut(&mut |data| data.fill(0.0));
    z
}

/// `target += other`, position by position.
pub fn accumulate<P: Parameters + ?Sized>(target: &mut P, other: &P) {
    let flat = flatten(other);
    let mut offset = 0;
    target.visit_mut(&mut |data| {
        for (d, o) in data.iter_mut().zip(&flat[offset..]) {
            *d += o;
        }
        offset += data.len();
    });
}

pub fn scale<P: Parameters + ?Sized>(target: &mut P, factor: f64) {
    target.visit_mut(&mut |data| data.iter_mut().for_each(|d| *d *= factor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`Parameters`] for a struct of standard-layout ndarray fields.
#[macro_export]
macro_rules! impl_parameters {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::nn::Parameters for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
                $(
                    f(
                        &$crate::nn::params_join(prefix, stringify!($field)),
                        self.$field.shape(),
                        self.$field.as_slice().expect("standard layout"),
                    );
                )*
            }

            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
                $( f(self.$field.as_slice_mut().expect("standard layout")); )*
            }
        }
    };
}
