use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HeadKind {
    /// Linear projection of the pooled embedding, trained with MSE.
    Deterministic,
    /// Conditional flow head, trained with NLL.
    Probabilistic,
}

/// Map applied to a target in original units before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TargetTransform {
    #[default]
    Identity,
    /// Learn `log10(y)`; predictions are mapped back with `10^x`.
    Log10,
}

impl TargetTransform {
    #[inline]
    pub fn forward(self, y: f64) -> f64 {
        match self {
            TargetTransform::Identity => y,
            TargetTransform::Log10 => libm::log10(y),
        }
    }

    #[inline]
    pub fn inverse(self, t: f64) -> f64 {
        match self {
            TargetTransform::Identity => t,
            TargetTransform::Log10 => libm::pow(10.0, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct HeadSpec {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub unit: String,
    pub kind: HeadKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub transform: TargetTransform,
}

impl HeadSpec {
    pub fn new(name: &str, unit: &str, kind: HeadKind) -> Self {
        Self { name: name.into(), unit: unit.into(), kind, transform: TargetTransform::Identity }
    }

    pub fn with_transform(mut self, transform: TargetTransform) -> Self {
        self.transform = transform;
        self
    }
}

/// Ordered list of predicted metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "TargetSpecRepr", into = "TargetSpecRepr"))]
pub struct TargetSpec {
    heads: Vec<HeadSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TargetSpecError {
    #[error("target spec needs at least one head")]
    NoHeads,
    #[error("duplicate head name `{0}`")]
    DuplicateHead(String),
}

impl TargetSpec {
    pub fn new(heads: Vec<HeadSpec>) -> Result<Self, TargetSpecError> {
        if heads.is_empty() {
            return Err(TargetSpecError::NoHeads);
        }
        let mut names = BTreeSet::new();
        for h in &heads {
            if !names.insert(h.name.as_str()) {
                return Err(TargetSpecError::DuplicateHead(h.name.clone()));
            }
        }
        Ok(Self { heads })
    }

    pub fn heads(&self) -> &[HeadSpec] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }
}

#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[derive(Debug, Clone)]
#[doc(hidden)]
pub struct TargetSpecRepr {
    heads: Vec<HeadSpec>,
}

impl TryFrom<TargetSpecRepr> for TargetSpec {
    type Error = TargetSpecError;

    fn try_from(r: TargetSpecRepr) -> Result<Self, Self::Error> {
        Self::new(r.heads)
    }
}

impl From<TargetSpec> for TargetSpecRepr {
    fn from(t: TargetSpec) -> Self {
        Self { heads: t.heads }
    }
}
