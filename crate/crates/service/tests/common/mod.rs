#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use matchbox_core::spoofdet::SkinModel;
use matchbox_core::synth::{generate_impression, render_direct_view, spoof_direct, spoof_ftir, Impression, SynthSpec};
use matchbox_core::RasterImage;
use serde_json::Value;
use tower::ServiceExt;

pub const BOUNDARY: &str = "matchbox-test-boundary";

pub struct Views {
    pub direct: Vec<u8>,
    pub ftir: Vec<u8>,
}

impl Views {
    pub fn write(&self, dir: &Path, stem: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let (d, f) = (dir.join(format!("{stem}.ppm")), dir.join(format!("{stem}.pgm")));
        std::fs::write(&d, &self.direct).unwrap();
        std::fs::write(&f, &self.ftir).unwrap();
        (d, f)
    }
}

/// Live capture of finger `seed`; impression 0 is the canonical placement.
pub fn live(seed: u64, impression: u64) -> Views {
    let spec = SynthSpec::new(seed);
    let imp = if impression == 0 { Impression::identity() } else { Impression::random(seed * 100 + impression, 0.3, 15.0, 5.0) };
    Views {
        direct: render_direct_view(&spec, &SkinModel::default()).unwrap().to_netpbm(),
        ftir: generate_impression(&spec, &imp).unwrap().0.to_netpbm(),
    }
}

pub fn spoofed(seed: u64) -> Views {
    let spec = SynthSpec::new(seed);
    let direct = render_direct_view(&spec, &SkinModel::default()).unwrap();
    let ftir = generate_impression(&spec, &Impression::identity()).unwrap().0;
    Views { direct: spoof_direct(&direct, [0.12, -0.1]).unwrap().to_netpbm(), ftir: spoof_ftir(&ftir, 0.8).unwrap().to_netpbm() }
}

pub fn uniform_gray_ftir(seed: u64) -> Views {
    let spec = SynthSpec::new(seed);
    Views {
        direct: render_direct_view(&spec, &SkinModel::default()).unwrap().to_netpbm(),
        ftir: RasterImage::filled(spec.width, spec.height, 128).to_netpbm(),
    }
}

pub enum Part<'a> {
    Text(&'a str, &'a str),
    File(&'a str, &'a [u8]),
}

pub fn multipart(parts: &[Part]) -> Vec<u8> {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match p {
            Part::Text(name, value) => {
                body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes());
                body.extend_from_slice(value.as_bytes());
            }
            Part::File(name, bytes) => {
                body.extend_from_slice(
                    format!(
                        "Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}.pnm\"\r\n\
                         Content-Type: image/x-portable-anymap\r\n\r\n"
                    )
                    .as_bytes(),
                );
                body.extend_from_slice(bytes);
            }
        }
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn post(uri: &str, parts: &[Part]) -> Request<Body> {
    Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("non-JSON body ({e}): {bytes:?}"));
    (status, body)
}

/// Drops the fields that legitimately differ between two runs.
pub fn normalize(mut v: Value) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(m) => {
                m.remove("timings_ms");
                m.remove("enrolled_at");
                m.values_mut().for_each(strip);
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    strip(&mut v);
    v
}
