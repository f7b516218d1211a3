//! Named parameter groups and deterministic initialisation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::Tensor;

/// Declares a struct of named tensors, generic over the element so the same
/// layout can hold values (`Tensor`), tape handles (`Var`) or optimiser
/// state.
macro_rules! param_group {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = $crate::engine::Tensor> {
            $($(#[$fmeta])* pub $field: T,)+
        }

        impl<T> $name<T> {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn map<U>(&self, mut f: impl FnMut(&'static str, &T) -> U) -> $name<U> {
                $name { $($field: f(stringify!($field), &self.$field),)+ }
            }

            pub fn try_map<U, E>(
                &self,
                mut f: impl FnMut(&'static str, &T) -> ::std::result::Result<U, E>,
            ) -> ::std::result::Result<$name<U>, E> {
                Ok($name { $($field: f(stringify!($field), &self.$field)?,)+ })
            }

            pub fn for_each<'a>(&'a self, mut f: impl FnMut(&'static str, &'a T)) {
                $(f(stringify!($field), &self.$field);)+
            }

            pub fn for_each_mut<'a>(&'a mut self, mut f: impl FnMut(&'static str, &'a mut T)) {
                $(f(stringify!($field), &mut self.$field);)+
            }
        }

        impl $name<$crate::engine::Tensor> {
            /// Places every tensor on `tape` as a trainable leaf.
            pub fn bind(&self, tape: &mut $crate::engine::Tape) -> $crate::error::Result<$name<$crate::engine::Var>> {
                self.try_map(|_, t| tape.leaf(t.clone()))
            }

            /// Places every tensor on `tape` as a constant.
            pub fn bind_frozen(&self, tape: &mut $crate::engine::Tape) -> $crate::error::Result<$name<$crate::engine::Var>> {
                self.try_map(|_, t| tape.constant(t.clone()))
            }
        }
    };
}

pub(crate) use param_group;

/// Uniform initialisation scaled by fan-in: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Convolution kernel `[k, k, ci, co]` with fan-in `k * k * ci`.
pub fn conv_kernel(rng: &mut ChaCha8Rng, k: usize, ci: usize, co: usize) -> Tensor {
    he_uniform(rng, &[k, k, ci, co], k * k * ci)
}
