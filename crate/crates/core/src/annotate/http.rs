use std::sync::Arc;

use super::{AnnotateError, AnnotationBackend, AnnotationSource};
use crate::llm::LlmClient;
use crate::scene::EntityCategory;

pub const ANNOTATE_TEMPLATE: &str = include_str!("../../prompts/annotate.v1.txt");

/// Asks an LLM for one pair at a time using the versioned annotation prompt.
pub struct LlmAnnotationBackend {
    client: Arc<dyn LlmClient>,
}

impl LlmAnnotationBackend {
    pub fn new(client: Arc<dyn LlmClient>) -> Self {
        LlmAnnotationBackend { client }
    }

    pub fn user_prompt(a: EntityCategory, b: EntityCategory) -> String {
        format!("Entity 1: {a}\nEntity 2: {b}\nReturn the JSON annotation for this pair.")
    }
}

impl AnnotationBackend for LlmAnnotationBackend {
    fn source(&self) -> AnnotationSource {
        AnnotationSource::Llm
    }

    fn query(&self, a: EntityCategory, b: EntityCategory) -> Result<String, AnnotateError> {
        self.client
            .complete(ANNOTATE_TEMPLATE, &Self::user_prompt(a, b))
            .map_err(|e| AnnotateError::BackendUnavailable(e.to_string()))
    }
}
