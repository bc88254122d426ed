use std::time::Duration;

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use reqwest::{multipart, Client, RequestBuilder, Url};
use structoid_broker::PerformRequest;
use structoid_core::oai::{OaiResponse, METADATA_PREFIX};
use structoid_core::parse_object;

use crate::config::{pick, CliConfig, DEFAULT_BROKER_BIND, DEFAULT_REPO_BIND, DEFAULT_TIMEOUT_SECS};
use crate::local::{collect_blobs, load_manifest, print_json, read, write_output};
use crate::{
    key_value, CliError, CliResult, DeregisterArgs, GetDatastreamArgs, GetObjectArgs, HarvestArgs, IngestArgs, ListArgs,
    PerformArgs, RegisterArgs,
};

/// Slack on top of the broker's own deadline before the client gives up.
const CLIENT_MARGIN: Duration = Duration::from_secs(30);

fn enc(s: &str) -> String {
    utf8_percent_encode(s, NON_ALPHANUMERIC).to_string()
}

fn trim(url: String) -> String {
    url.trim_end_matches('/').to_string()
}

fn repo_url(flag: &Option<String>, config: &CliConfig) -> String {
    trim(pick(flag, &config.repo_url).unwrap_or_else(|| format!("http://{DEFAULT_REPO_BIND}")))
}

fn broker_url(flag: &Option<String>, config: &CliConfig) -> String {
    trim(pick(flag, &config.broker_url).unwrap_or_else(|| format!("http://{DEFAULT_BROKER_BIND}")))
}

fn client(timeout: Duration) -> Result<Client, CliError> {
    Client::builder().timeout(timeout).build().map_err(|e| CliError::Io(e.to_string()))
}

fn url_with(base: &str, pairs: &[(&str, &str)]) -> Result<Url, CliError> {
    Url::parse_with_params(base, pairs).map_err(|e| CliError::Usage(format!("bad URL `{base}`: {e}")))
}

struct Reply {
    status: reqwest::StatusCode,
    content_type: String,
    body: Vec<u8>,
}

async fn send(request: RequestBuilder) -> Result<Reply, CliError> {
    let response = request.send().await.map_err(|e| CliError::Io(format!("request failed: {e}")))?;
    let status = response.status();
    let content_type = response
        .headers()
        .get(reqwest::header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let body = response.bytes().await.map_err(|e| CliError::Io(format!("reading reply: {e}")))?.to_vec();
    Ok(Reply { status, content_type, body })
}

/// Prints a service reply; error replies are printed too, then reported as
/// a failure.
fn print_reply(reply: &Reply) -> CliResult {
    write_output(None, &reply.body)?;
    if !reply.body.ends_with(b"\n") {
        println!();
    }
    check(reply)
}

fn check(reply: &Reply) -> CliResult {
    if reply.status.is_success() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("service replied {}", reply.status)))
    }
}

pub async fn ingest(args: &IngestArgs, config: &CliConfig, json: bool) -> CliResult {
    let document = read(&args.document)?;
    let blobs = collect_blobs(&document, args)?;
    let mut form = multipart::Form::new().part("document", multipart::Part::bytes(document));
    for (key, bytes) in blobs {
        form = form.part(key, multipart::Part::bytes(bytes));
    }
    let url = format!("{}/objects", repo_url(&args.repo, config));
    let reply = send(client(CLIENT_MARGIN)?.post(url).multipart(form)).await?;
    if !reply.status.is_success() {
        return print_reply(&reply);
    }
    let v: serde_json::Value =
        serde_json::from_slice(&reply.body).map_err(|e| CliError::Io(format!("unreadable reply: {e}")))?;
    if json {
        print_json(&v);
    } else {
        println!("{} {}", v["object_id"].as_str().unwrap_or(""), v["datestamp"].as_str().unwrap_or(""));
    }
    Ok(())
}

pub async fn register(args: &RegisterArgs, json: bool) -> CliResult {
    let (_, bytes) = load_manifest(args)?;
    let broker = trim(args.broker.clone().expect("dispatched on --broker"));
    let format = if json { "json" } else { "xml" };
    let request = client(CLIENT_MARGIN)?
        .post(format!("{broker}/registry?format={format}"))
        .header(reqwest::header::CONTENT_TYPE, "text/xml")
        .body(bytes);
    print_reply(&send(request).await?)
}

pub async fn deregister(args: &DeregisterArgs, json: bool) -> CliResult {
    let broker = trim(args.broker.clone().expect("dispatched on --broker"));
    let format = if json { "json" } else { "xml" };
    let url = format!("{broker}/registry/{}?format={format}", enc(&args.mechanism_id));
    print_reply(&send(client(CLIENT_MARGIN)?.delete(url)).await?)
}

pub async fn harvest(args: &HarvestArgs, config: &CliConfig, json: bool) -> CliResult {
    let needs_prefix = matches!(args.verb.as_str(), "ListIdentifiers" | "ListRecords" | "GetRecord");
    let prefix = args.metadata_prefix.clone().or_else(|| needs_prefix.then(|| METADATA_PREFIX.to_string()));
    let mut pairs = vec![("verb", args.verb.as_str())];
    for (name, value) in [
        ("identifier", &args.identifier),
        ("metadataPrefix", &prefix),
        ("from", &args.from),
        ("until", &args.until),
    ] {
        if let Some(v) = value {
            pairs.push((name, v));
        }
    }
    let repo = pick(&args.repo, &config.repo_url).map(trim);
    let url = match &args.broker {
        Some(broker) => {
            if let Some(repo) = &repo {
                pairs.push(("repo", repo));
            }
            url_with(&format!("{}/broker/proxy/oai", trim(broker.clone())), &pairs)?
        }
        None => url_with(&format!("{}/oai", repo_url(&args.repo, config)), &pairs)?,
    };
    let reply = send(client(CLIENT_MARGIN)?.get(url)).await?;
    if !reply.status.is_success() {
        return print_reply(&reply);
    }
    let parsed = OaiResponse::parse(&reply.body).map_err(|e| CliError::Io(e.to_string()))?;
    if json {
        print_json(&parsed);
    } else {
        write_output(None, &reply.body)?;
    }
    match &parsed.result {
        Ok(_) => Ok(()),
        Err(e) => Err(CliError::Failed(format!("{}: {}", e.code.as_str(), e.message))),
    }
}

pub async fn list_behaviors(args: &ListArgs, config: &CliConfig, json: bool) -> CliResult {
    let broker = broker_url(&args.broker, config);
    let repo = pick(&args.repo, &config.repo_url).map(trim);
    let mut pairs = vec![("objectID", args.object.as_str()), ("format", if json { "json" } else { "xml" })];
    if let Some(repo) = &repo {
        pairs.push(("repo", repo));
    }
    let url = url_with(&format!("{broker}/broker/ListBehaviors"), &pairs)?;
    print_reply(&send(client(CLIENT_MARGIN)?.get(url)).await?)
}

pub async fn perform(args: &PerformArgs, config: &CliConfig, json: bool) -> CliResult {
    let broker = broker_url(&args.broker, config);
    let mut params = std::collections::BTreeMap::new();
    for p in &args.params {
        let (k, v) = key_value(p, "--param")?;
        params.insert(k, v);
    }
    let request = PerformRequest {
        object_id: args.object.clone(),
        mechanism_url: args.mechanism.clone(),
        behavior_name: args.behavior.clone(),
        params,
        structoid_sid: args.structoid.clone(),
        repo: pick(&args.repo, &config.repo_url).map(trim),
    };
    let format = match (&args.output, json) {
        (Some(_), _) => "raw",
        (None, true) => "json",
        (None, false) => "xml",
    };
    let budget = Duration::from_secs(pick(&args.timeout_secs, &config.timeout_secs).unwrap_or(DEFAULT_TIMEOUT_SECS));
    let http = client(budget + CLIENT_MARGIN)?
        .post(format!("{broker}/broker/PerformBehavior?format={format}"))
        .header(reqwest::header::CONTENT_TYPE, "application/json")
        .body(serde_json::to_vec(&request).expect("serializable"));
    let reply = send(http).await?;
    match &args.output {
        Some(path) if reply.status.is_success() => {
            write_output(Some(path), &reply.body)?;
            if path.as_os_str() != "-" {
                if json {
                    print_json(&serde_json::json!({
                        "mime": reply.content_type,
                        "bytes": reply.body.len(),
                        "path": path,
                    }));
                } else {
                    println!("{} ({} bytes) -> {}", reply.content_type, reply.body.len(), path.display());
                }
            }
            Ok(())
        }
        _ => print_reply(&reply),
    }
}

pub async fn get_object(args: &GetObjectArgs, config: &CliConfig, json: bool) -> CliResult {
    let url = format!("{}/objects/{}", repo_url(&args.repo, config), enc(&args.object));
    let reply = send(client(CLIENT_MARGIN)?.get(url)).await?;
    if !json || !reply.status.is_success() {
        return print_reply(&reply);
    }
    let object = parse_object(&reply.body).map_err(|e| CliError::Failed(e.to_string()))?;
    print_json(&object);
    Ok(())
}

pub async fn get_datastream(args: &GetDatastreamArgs, config: &CliConfig) -> CliResult {
    let url = format!(
        "{}/objects/{}/datastreams/{}",
        repo_url(&args.repo, config),
        enc(&args.object),
        enc(&args.dsid)
    );
    let reply = send(client(CLIENT_MARGIN)?.get(url)).await?;
    if !reply.status.is_success() {
        return print_reply(&reply);
    }
    write_output(args.output.as_deref(), &reply.body)
}
