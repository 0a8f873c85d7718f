//! Prompt templates for the three task framings.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum PromptError {
    EmptyInput,
}

impl fmt::Display for PromptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyInput => write!(f, "prompt input text must be non-empty"),
        }
    }
}

impl std::error::Error for PromptError {}

/// Which task the prompt asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptKind {
    /// Label prediction from the input alone.
    Predict,
    /// Rationale generation from the input alone (foundation stage).
    ExplainUnconditioned,
    /// Rationale generation conditioned on a label text.
    ExplainGivenLabel(String),
}

/// Renders the exact prompt template for `kind` around `input_text`.
///
/// Rendering is injective over (kind, payload, input) as long as label
/// texts do not contain the literal `", explain:"` separator.
pub fn format_prompt(kind: &PromptKind, input_text: &str) -> Result<String, PromptError> {
    if input_text.is_empty() {
        return Err(PromptError::EmptyInput);
    }
    Ok(match kind {
        PromptKind::Predict => format!("predict: {input_text}"),
        PromptKind::ExplainUnconditioned => format!("explain: {input_text}"),
        PromptKind::ExplainGivenLabel(label) => {
            format!("given label: {label}, explain: {input_text}")
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_template() {
        let p = format_prompt(&PromptKind::Predict, "fever 3 days").unwrap();
        assert_eq!(p, "predict: fever 3 days");
    }

    #[test]
    fn explain_unconditioned_template() {
        let p = format_prompt(&PromptKind::ExplainUnconditioned, "x").unwrap();
        assert_eq!(p, "explain: x");
    }

    #[test]
    fn explain_given_label_template() {
        let p = format_prompt(&PromptKind::ExplainGivenLabel("Home Care".into()), "x").unwrap();
        assert_eq!(p, "given label: Home Care, explain: x");
    }

    #[test]
    fn empty_input_is_contract_error() {
        assert_eq!(format_prompt(&PromptKind::Predict, ""), Err(PromptError::EmptyInput));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn label_strategy() -> impl Strategy<Value = String> {
            "[a-z ]{1,12}".prop_filter("no separator", |s| !s.contains(", explain:"))
        }

        proptest! {
            #[test]
            fn rendering_is_injective(
                l1 in label_strategy(),
                l2 in label_strategy(),
                x1 in "[a-z ]{1,20}",
                x2 in "[a-z ]{1,20}",
            ) {
                let kinds1 = [
                    PromptKind::Predict,
                    PromptKind::ExplainUnconditioned,
                    PromptKind::ExplainGivenLabel(l1.clone()),
                ];
                let kinds2 = [
                    PromptKind::Predict,
                    PromptKind::ExplainUnconditioned,
                    PromptKind::ExplainGivenLabel(l2.clone()),
                ];
                for k1 in &kinds1 {
                    for k2 in &kinds2 {
                        let r1 = format_prompt(k1, &x1).unwrap();
                        let r2 = format_prompt(k2, &x2).unwrap();
                        if r1 == r2 {
                            prop_assert_eq!(k1, k2);
                            prop_assert_eq!(&x1, &x2);
                        }
                    }
                }
            }
        }
    }
}
