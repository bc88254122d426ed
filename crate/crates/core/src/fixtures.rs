//! The sample image object used throughout tests, examples and demos.

use std::collections::BTreeMap;

use crate::object::{cornell_image_type, DataStream, DigitalObject, Role, Structoid};

const SAMPLE_DOCUMENT: &str = include_str!("../data/sampleDO.xml");

/// 1x1 GIF, white.
pub const THUMBNAIL_GIF: &[u8] = &[
    0x47, 0x49, 0x46, 0x38, 0x39, 0x61, 0x01, 0x00, 0x01, 0x00, 0x80, 0x00, 0x00, 0x00, 0x00, 0x00,
    0xff, 0xff, 0xff, 0x21, 0xf9, 0x04, 0x01, 0x00, 0x00, 0x00, 0x00, 0x2c, 0x00, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x01, 0x00, 0x00, 0x02, 0x02, 0x44, 0x01, 0x00, 0x3b,
];

/// 1x1 GIF, red.
pub const FULL_IMAGE_GIF: &[u8] = &[
    0x47, 0x49, 0x46, 0x38, 0x39, 0x61, 0x01, 0x00, 0x01, 0x00, 0x80, 0x00, 0x00, 0xff, 0x00, 0x00,
    0xff, 0xff, 0xff, 0x21, 0xf9, 0x04, 0x01, 0x00, 0x00, 0x00, 0x00, 0x2c, 0x00, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x01, 0x00, 0x00, 0x02, 0x02, 0x44, 0x01, 0x00, 0x3b,
];

pub const DESCRIPTION_TEXT: &str = "A photograph of the Cornell clock tower & library slope at dusk.";

/// The sample object document, verbatim, including its undeclared
/// `xlink:` and `xsi:` prefixes.
pub fn figure2_document() -> &'static str {
    SAMPLE_DOCUMENT
}

/// The expected parse of [`figure2_document`].
pub fn figure2_object() -> DigitalObject {
    let ds = |dsid: &str, mime: &str, descriptor: &str, file: &str| DataStream {
        dsid: dsid.into(),
        mime: mime.into(),
        descriptor: descriptor.into(),
        bytes_ref: format!("http://local.secure.storage/{file}"),
    };
    let role = |label: &str, dsid: &str| Role { label: label.into(), target_dsid: dsid.into() };
    DigitalObject {
        object_id: "cornell/sampleDO".into(),
        datastreams: vec![
            ds("DS-2", "text/plain", "description of image", "DS-2.txt"),
            ds("DS-3", "image/gif", "small image", "DS-3.gif"),
            ds("DS-4", "image/gif", "large image", "DS-4.gif"),
        ],
        structoids: vec![Structoid {
            sid: "S-7".into(),
            schema_uri: cornell_image_type(),
            descriptor: "simple image structoid".into(),
            roles: vec![
                role("description", "DS-2"),
                role("thumbnail", "DS-3"),
                role("fullImage", "DS-4"),
            ],
        }],
        disseminators: vec![],
    }
}

/// Content for the three sample datastreams, keyed by DSID.
pub fn figure2_blobs() -> BTreeMap<String, Vec<u8>> {
    BTreeMap::from([
        ("DS-2".to_string(), DESCRIPTION_TEXT.as_bytes().to_vec()),
        ("DS-3".to_string(), THUMBNAIL_GIF.to_vec()),
        ("DS-4".to_string(), FULL_IMAGE_GIF.to_vec()),
    ])
}
