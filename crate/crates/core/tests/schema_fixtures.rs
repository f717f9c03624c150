use std::path::{Path, PathBuf};

use aios_core::wire::schema::{export_all, exported, schema_document};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn validator(name: &str) -> jsonschema::Validator {
    let doc = read(&fixtures().join("schemas").join(format!("{name}.schema.json")));
    jsonschema::validator_for(&doc).unwrap()
}

#[test]
fn checked_in_schemas_are_current() {
    let dir = tempfile::tempdir().unwrap();
    let written = export_all(dir.path()).unwrap();
    assert_eq!(written.len(), exported().len());
    for path in written {
        let name = path.file_name().unwrap();
        let checked_in = fixtures().join("schemas").join(name);
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&checked_in).unwrap_or_default(),
            "{} is stale; regenerate with `aios-bench schemas`",
            checked_in.display()
        );
    }
}

#[test]
fn every_schema_is_a_valid_document() {
    for (name, kind) in exported() {
        let doc = schema_document(name, kind);
        assert!(jsonschema::meta::is_valid(&doc), "{name}");
    }
}

#[test]
fn golden_documents_satisfy_exported_schemas() {
    let golden = fixtures().join("golden");
    let cases = [
        ("human_request.json", "rpc_request", Some("human_task_params")),
        ("delegation_request.json", "rpc_request", Some("delegation_params")),
        ("human_response.json", "rpc_response", Some("human_task_result")),
        ("delegation_response.json", "rpc_response", Some("delegation_result")),
        ("node_status_report.json", "node_status_report", None),
        ("task_assignment.json", "task_assignment", None),
        ("agent_metadata.json", "agent_metadata", None),
    ];
    for (file, envelope, inner) in cases {
        let doc = read(&golden.join(file));
        let v = validator(envelope);
        assert!(v.is_valid(&doc), "{file}: {:?}", v.iter_errors(&doc).map(|e| e.to_string()).collect::<Vec<_>>());
        if let Some(inner) = inner {
            let body = doc.get("params").or_else(|| doc.get("result")).unwrap();
            let v = validator(inner);
            assert!(
                v.is_valid(body),
                "{file} body: {:?}",
                v.iter_errors(body).map(|e| e.to_string()).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn schemas_reject_what_the_decoder_rejects() {
    let v = validator("human_task_params");
    let mut doc = read(&fixtures().join("golden/human_request.json"))["params"].clone();
    doc.as_object_mut().unwrap().remove("messages");
    assert!(!v.is_valid(&doc));
}
