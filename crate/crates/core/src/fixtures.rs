//! Small ready-made samples shared by tests and demos.

use crate::graph::{AnnotationSource, QASample};
use crate::parse::parse_step_answer;
use crate::prompt::answer_example;

/// The five-step laptop sample from the built-in answer example, wrapped as
/// a corpus sample.
pub fn laptop_sample() -> QASample {
    let value: serde_json::Value =
        serde_json::from_str(answer_example()).expect("built-in example parses");
    let answer = parse_step_answer(&value["answer"].to_string()).expect("built-in example valid");
    QASample {
        sample_id: "laptop-0001".to_string(),
        question: value["question"].as_str().unwrap().to_string(),
        answer,
        image_path: "0001-office-1/laptop.jpg".to_string(),
        scene_category: "office".to_string(),
        annotation_source: AnnotationSource::Human,
        parent_id: None,
        rule: None,
    }
}
