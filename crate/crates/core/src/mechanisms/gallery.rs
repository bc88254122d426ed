use base64::Engine;

use super::{require, BehaviorResult, Input, InvokeReply, Inputs, Mechanism, MechanismFault, Params};
use crate::xml::escape;

/// Renders `Cornell_ImageType` structoids: an HTML gallery page, the
/// description as HTML, or either image passed through untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct Gallery;

const DESCRIPTION: &str = "description";
const THUMBNAIL: &str = "thumbnail";
const FULL_IMAGE: &str = "fullImage";

fn text_of(input: &Input, label: &str) -> Result<String, MechanismFault> {
    if !input.mime.eq_ignore_ascii_case("text/plain") {
        return Err(MechanismFault(format!("{label} must be text/plain, got {}", input.mime)));
    }
    String::from_utf8(input.body.clone()).map_err(|_| MechanismFault(format!("{label} is not UTF-8 text")))
}

fn image_of<'a>(input: &'a Input, label: &str) -> Result<&'a Input, MechanismFault> {
    if !input.mime.to_ascii_lowercase().starts_with("image/") {
        return Err(MechanismFault(format!("{label} must be an image, got {}", input.mime)));
    }
    Ok(input)
}

/// Where the browser should load an image from: its public URL, or a data
/// URI when the content arrived without one.
fn image_src(input: &Input) -> String {
    match &input.url {
        Some(url) => url.clone(),
        None => format!(
            "data:{};base64,{}",
            input.mime,
            base64::engine::general_purpose::STANDARD.encode(&input.body)
        ),
    }
}

fn html(body: &str) -> BehaviorResult {
    BehaviorResult { mime: "text/html".into(), body: body.as_bytes().to_vec() }
}

impl Mechanism for Gallery {
    fn invoke(&self, behavior: &str, _params: &Params, inputs: &Inputs) -> Result<InvokeReply, MechanismFault> {
        let needed: &[&str] = match behavior {
            "Gallery" => &[DESCRIPTION, THUMBNAIL, FULL_IMAGE],
            "Description" => &[DESCRIPTION],
            "Thumbnail" => &[THUMBNAIL],
            "FullImage" => &[FULL_IMAGE],
            other => return Err(MechanismFault(format!("gallery has no behavior `{other}`"))),
        };
        if let Some(reply) = require(inputs, needed) {
            return Ok(reply);
        }

        let result = match behavior {
            "Gallery" => {
                let text = text_of(&inputs[DESCRIPTION], DESCRIPTION)?;
                let thumb = image_of(&inputs[THUMBNAIL], THUMBNAIL)?;
                let full = image_of(&inputs[FULL_IMAGE], FULL_IMAGE)?;
                html(&format!(
                    "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>Gallery</title></head>\n<body>\n\
                     <figure>\n<a href=\"{}\"><img src=\"{}\" alt=\"thumbnail\"></a>\n<figcaption>{}</figcaption>\n</figure>\n\
                     </body>\n</html>\n",
                    escape(&image_src(full)),
                    escape(&image_src(thumb)),
                    escape(&text)
                ))
            }
            "Description" => {
                let text = text_of(&inputs[DESCRIPTION], DESCRIPTION)?;
                html(&format!("<div class=\"description\">{}</div>\n", escape(&text)))
            }
            _ => {
                let label = if behavior == "Thumbnail" { THUMBNAIL } else { FULL_IMAGE };
                let image = image_of(&inputs[label], label)?;
                BehaviorResult { mime: image.mime.clone(), body: image.body.clone() }
            }
        };
        Ok(InvokeReply::Result(result))
    }
}
