use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Ground truth for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Single(usize),
    /// Sorted, de-duplicated positive class ids.
    Multi(Vec<usize>),
}

impl Label {
    pub fn multi(mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        Label::Multi(classes)
    }

    pub fn classes(&self) -> &[usize] {
        match self {
            Label::Single(c) => std::slice::from_ref(c),
            Label::Multi(cs) => cs,
        }
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes().contains(&class)
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, Label::Multi(_))
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let ids = self.classes();
        if ids.is_empty() {
            return Err(Error::Data("label has no positive class".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&c| c >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(())
    }

    /// Binary indicator vector over `classes`.
    pub fn indicator(&self, classes: usize) -> Vec<bool> {
        let mut v = vec![false; classes];
        for &c in self.classes() {
            v[c] = true;
        }
        v
    }
}

/// Cross-entropy for single-label batches, multilabel soft margin otherwise.
pub fn classification_loss(tape: &Tape, logits: &Tensor, labels: &[Label]) -> Result<Tensor> {
    let classes = *logits.shape().last().unwrap_or(&0);
    for l in labels {
        l.validate(classes)?;
    }
    let multi = labels.first().is_some_and(Label::is_multi);
    if labels.iter().any(|l| l.is_multi() != multi) {
        return Err(Error::Data("batch mixes single- and multi-label targets".into()));
    }
    if multi {
        let targets: Vec<Vec<bool>> = labels.iter().map(|l| l.indicator(classes)).collect();
        tape.multilabel_soft_margin(logits, &targets)
    } else {
        let ids: Vec<usize> = labels.iter().map(|l| l.classes()[0]).collect();
        tape.cross_entropy(logits, &ids)
    }
}
