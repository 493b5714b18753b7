//! Wire-contract checks shared by every backend: the in-process mock and the
//! same mock behind the HTTP server must answer identically.

mod common;

use std::sync::Arc;

use common::*;
use latte_core::backend::wire::{self, ErrorBody};
use latte_core::backend::{self, Backend, BackendError, BackendRequest, BackendResponse, HttpBackend, MockBackend, Role};
use latte_core::raster::{Pixel, PixelGrid};
use proptest::prelude::*;
use serde_json::json;

const CONTRACT_FIXTURE: &str = r#"
# one line per scripted answer
{"role":"generate","match":{"seq":1},"response":{"latex":"x^{2}"}}
{"role":"generate","match":{"seq":2},"error":"weights not loaded"}
{"role":"localize","match":{"seq":1},"response":{"index":1}}
{"role":"localize","match":{"seq":2},"response":{"index":7}}
{"role":"refine","match":{"seq":1},"response":{"completion_tokens":["2","}"]}}
"#;

fn img() -> PixelGrid {
    let mut g = PixelGrid::white(3, 4).unwrap();
    g.set(1, 2, INK);
    g
}

fn requests() -> Vec<BackendRequest> {
    vec![
        BackendRequest::Generate { image: img() },
        BackendRequest::Generate { image: img() },
        BackendRequest::Generate { image: img() },
        BackendRequest::Localize { image: img(), tokens: vec!["x".into(), "^".into()] },
        BackendRequest::Localize { image: img(), tokens: vec!["x".into(), "^".into()] },
        BackendRequest::Refine { image: img(), prompt_tokens: vec!["^".into(), "<s>".into(), "x".into()] },
    ]
}

type Expected = Result<BackendResponse, fn(&BackendError) -> bool>;

fn expected() -> Vec<Expected> {
    vec![
        Ok(BackendResponse::Generate { latex: "x^{2}".into() }),
        Err(|e| matches!(e, BackendError::Model(m) if m.contains("weights not loaded"))),
        Err(|e| matches!(e, BackendError::Unscripted(_))),
        Ok(BackendResponse::Localize { index: 1 }),
        // Index 7 is outside 0..=2.
        Err(|e| matches!(e, BackendError::Protocol(_) | BackendError::Model(_))),
        Ok(BackendResponse::Refine { completion_tokens: vec!["2".into(), "}".into()] }),
    ]
}

fn run_contract(b: &dyn Backend) {
    for (i, (req, want)) in requests().iter().zip(expected()).enumerate() {
        let got = backend::call(b, req);
        match (got, want) {
            (Ok(r), Ok(w)) => assert_eq!(r, w, "request {i}"),
            (Err(e), Err(check)) => assert!(check(&e), "request {i}: unexpected error {e:?}"),
            (got, _) => panic!("request {i}: got {got:?}"),
        }
    }
}

#[test]
fn in_process_mock_meets_contract() {
    run_contract(&MockBackend::parse(CONTRACT_FIXTURE).unwrap());
}

#[test]
fn http_mock_meets_the_same_contract() {
    let mock = Arc::new(MockBackend::parse(CONTRACT_FIXTURE).unwrap());
    let server = backend::serve(mock.clone(), "127.0.0.1:0").unwrap();
    run_contract(&HttpBackend::new(server.url()));
    let calls = mock.calls();
    assert_eq!((calls.generate, calls.localize, calls.refine), (3, 2, 1));
    server.shutdown();
}

#[test]
fn image_hash_keys_route_by_content() {
    let other = PixelGrid::filled(3, 4, INK).unwrap();
    let text = format!(
        r#"{{"role":"generate","match":{{"image_sha256":"{}"}},"response":{{"latex":"ink"}}}}
{{"role":"generate","match":{{"seq":1}},"response":{{"latex":"first"}}}}"#,
        other.content_hash()
    );
    let mock = Arc::new(MockBackend::parse(&text).unwrap());
    let server = backend::serve(mock, "127.0.0.1:0").unwrap();
    let client = HttpBackend::new(server.url());
    let gen = |image: PixelGrid| client.call(&BackendRequest::Generate { image });
    assert_eq!(gen(other.clone()).unwrap(), BackendResponse::Generate { latex: "ink".into() });
    // Sequence numbers count every generate call, matched or not.
    assert!(matches!(gen(img()), Err(BackendError::Unscripted(_))));
    assert_eq!(gen(other).unwrap(), BackendResponse::Generate { latex: "ink".into() });
}

fn post(url: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
    match ureq::post(url).send_json(body) {
        Ok(r) => (r.status(), r.into_json().unwrap()),
        Err(ureq::Error::Status(code, r)) => (code, r.into_json().unwrap()),
        Err(e) => panic!("transport: {e}"),
    }
}

#[test]
fn raw_wire_shapes() {
    let mock = Arc::new(MockBackend::parse(CONTRACT_FIXTURE).unwrap());
    let server = backend::serve(mock, "127.0.0.1:0").unwrap();
    let base = server.url();
    let image = wire::encode_image(&img()).unwrap();

    let (status, body) = post(&format!("{base}/v1/generate"), json!({ "image_png_base64": image }));
    assert_eq!(status, 200);
    assert_eq!(body, json!({ "latex": "x^{2}" }));

    let (status, body) = post(&format!("{base}/v1/generate"), json!({ "image_png_base64": image, "extra": 1 }));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["kind"], "bad_request");

    let (status, body) = post(&format!("{base}/v1/generate"), json!({ "image_png_base64": "not base64!" }));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["kind"], "bad_request");

    let (status, body) = post(&format!("{base}/v1/generate"), json!({ "image_png_base64": image }));
    assert_eq!(status, 500);
    assert_eq!(body["error"]["kind"], "model_error");
    serde_json::from_value::<ErrorBody>(body).unwrap();

    let (status, body) = post(&format!("{base}/v1/generate"), json!({ "image_png_base64": image }));
    assert_eq!(status, 422);
    assert_eq!(body["error"]["kind"], "unscripted_request");

    let (status, body) = post(&format!("{base}/v1/translate"), json!({}));
    assert_eq!(status, 404);
    assert_eq!(body["error"]["kind"], "not_found");

    let (status, body) = post(
        &format!("{base}/v1/localize"),
        json!({ "image_png_base64": image, "tokens": ["a", "b", "c"] }),
    );
    assert_eq!((status, body), (200, json!({ "index": 1 })));
}

#[test]
fn role_endpoints_are_stable() {
    let paths: Vec<&str> = Role::ALL.iter().map(|r| r.endpoint()).collect();
    assert_eq!(paths, ["/v1/generate", "/v1/localize", "/v1/refine"]);
    for r in Role::ALL {
        assert_eq!(Role::from_endpoint(r.endpoint()), Some(r));
    }
}

fn small_image() -> impl Strategy<Value = PixelGrid> {
    (1usize..6, 1usize..6, prop::collection::vec(any::<(u8, u8, u8)>(), 36)).prop_map(|(h, w, px)| {
        PixelGrid::new(h, w, px[..h * w].iter().map(|&(r, g, b)| Pixel::new(r, g, b)).collect()).unwrap()
    })
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z{}^_\\\\]{1,4}", 0..8)
}

fn any_request() -> impl Strategy<Value = BackendRequest> {
    prop_oneof![
        small_image().prop_map(|image| BackendRequest::Generate { image }),
        (small_image(), tokens()).prop_map(|(image, tokens)| BackendRequest::Localize { image, tokens }),
        (small_image(), tokens()).prop_map(|(image, prompt_tokens)| BackendRequest::Refine { image, prompt_tokens }),
    ]
}

proptest! {
    #[test]
    fn requests_round_trip_through_json(req in any_request()) {
        let value = wire::request_to_json(&req).unwrap();
        let bytes = serde_json::to_vec(&value).unwrap();
        let back = wire::request_from_json(req.role(), &bytes).unwrap();
        prop_assert_eq!(&back, &req);
        // Serialization is canonical: encoding the decoded request gives the same bytes.
        prop_assert_eq!(serde_json::to_vec(&wire::request_to_json(&back).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn responses_round_trip_through_json(latex in ".{0,20}", index in 0usize..100, toks in tokens()) {
        for resp in [
            BackendResponse::Generate { latex: latex.clone() },
            BackendResponse::Localize { index },
            BackendResponse::Refine { completion_tokens: toks.clone() },
        ] {
            let bytes = serde_json::to_vec(&wire::response_to_json(&resp)).unwrap();
            prop_assert_eq!(wire::response_from_json(resp.role(), &bytes).unwrap(), resp);
        }
    }
}
