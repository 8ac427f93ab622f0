//! Controller outputs and the image-to-command controller abstraction.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::imgops::Image;

/// Steering in `[-1, 1]` (positive turns left), throttle in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlOutput {
    pub steering: f64,
    pub throttle: f64,
}

impl ControlOutput {
    /// Clamps into range. Non-finite components are kept as-is so callers can
    /// detect them with [`ControlOutput::is_finite`].
    pub fn clamped(steering: f64, throttle: f64) -> Self {
        Self {
            steering: if steering.is_finite() { steering.clamp(-1.0, 1.0) } else { steering },
            throttle: if throttle.is_finite() { throttle.clamp(0.0, 1.0) } else { throttle },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.steering.is_finite() && self.throttle.is_finite()
    }

    pub fn in_range(&self) -> bool {
        self.is_finite()
            && (-1.0..=1.0).contains(&self.steering)
            && (0.0..=1.0).contains(&self.throttle)
    }
}

/// A pure image-driven controller, e.g. a trained network.
pub trait Controller: Sync {
    fn control(&self, img: &Image) -> ControlOutput;
}

impl<C: Controller + ?Sized> Controller for &C {
    fn control(&self, img: &Image) -> ControlOutput {
        (**self).control(img)
    }
}

impl<C: Controller + ?Sized + Send> Controller for Box<C> {
    fn control(&self, img: &Image) -> ControlOutput {
        (**self).control(img)
    }
}

/// Wraps a controller and counts invocations.
pub struct CountingController<C> {
    inner: C,
    calls: AtomicU64,
}

impl<C: Controller> CountingController<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<C: Controller> Controller for CountingController<C> {
    fn control(&self, img: &Image) -> ControlOutput {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.control(img)
    }
}

/// Closure adapter.
pub struct FnController<F>(pub F);

impl<F: Fn(&Image) -> ControlOutput + Sync> Controller for FnController<F> {
    fn control(&self, img: &Image) -> ControlOutput {
        (self.0)(img)
    }
}
