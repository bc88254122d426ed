use std::collections::BTreeMap;

use proptest::prelude::*;
use structoid_core::fixtures::{figure2_blobs, figure2_document};
use structoid_repository::{Repository, RepositoryConfig};

#[derive(Debug, Clone)]
enum Step {
    /// A valid version of object `n` carrying `marker` in its description.
    Good(u8, u8),
    /// A document that fails to parse or check.
    Invalid(u8),
    /// A valid document whose locally held bytes were not supplied.
    MissingBlob(u8),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0u8..3, any::<u8>()).prop_map(|(n, m)| Step::Good(n, m)),
        (0u8..3).prop_map(Step::Invalid),
        (0u8..3).prop_map(Step::MissingBlob),
    ]
}

fn document(n: u8, marker: u8) -> String {
    figure2_document()
        .replace("cornell/sampleDO", &format!("obj/{n}"))
        .replace("<descriptor>", &format!("<descriptor>v{marker} "))
}

type Snapshot = BTreeMap<String, (Vec<u8>, chrono::DateTime<chrono::Utc>)>;

fn snapshot(repo: &Repository) -> Snapshot {
    repo.list()
        .into_iter()
        .map(|s| (s.object.object_id.clone(), (s.document.as_ref().clone(), s.datestamp)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn failed_ingests_leave_prior_state(steps in prop::collection::vec(step(), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let repo = Repository::open(RepositoryConfig::new(dir.path(), "http://r.example")).unwrap();
        for step in steps {
            let before = snapshot(&repo);
            match step {
                Step::Good(n, m) => {
                    let doc = document(n, m);
                    repo.ingest(doc.as_bytes(), &figure2_blobs()).unwrap();
                    let after = snapshot(&repo);
                    let id = format!("obj/{n}");
                    prop_assert_eq!(&after[&id].0, &doc.into_bytes());
                    if let Some((_, old)) = before.get(&id) {
                        prop_assert!(after[&id].1 > *old);
                    }
                }
                Step::Invalid(n) => {
                    let doc = document(n, 0).replace(r#"DSID="DS-4" />"#, r#"DSID="DS-404" />"#);
                    prop_assert!(repo.ingest(doc.as_bytes(), &figure2_blobs()).is_err());
                    prop_assert_eq!(snapshot(&repo), before);
                }
                Step::MissingBlob(n) => {
                    let doc = document(n, 1).replace("http://local.secure.storage/DS-3.gif", "DS-3.gif");
                    let mut blobs = figure2_blobs();
                    blobs.remove("DS-3");
                    prop_assert!(repo.ingest(doc.as_bytes(), &blobs).is_err());
                    prop_assert_eq!(snapshot(&repo), before);
                }
            }
            // The persisted store agrees with memory after every step.
            let reopened = Repository::open(RepositoryConfig::new(dir.path(), "http://r.example")).unwrap();
            prop_assert_eq!(snapshot(&reopened), snapshot(&repo));
        }
    }
}
