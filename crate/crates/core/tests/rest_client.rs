use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ftm_core::error::Error;
use ftm_core::photo::{fetch_photo_metadata, BBox, FetchOptions};

struct Reply {
    status: u16,
    total_pages: Option<u32>,
    body: String,
}

struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    queries: Arc<Mutex<Vec<String>>>,
}

/// Serves `handler(query)` to every request until the test process exits.
fn serve(handler: impl Fn(&str) -> Reply + Send + 'static) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/photos", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let queries = Arc::new(Mutex::new(Vec::new()));
    let (h, q) = (hits.clone(), queries.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
            }
            let target = request_line.split_whitespace().nth(1).unwrap_or("");
            let query = target.split_once('?').map_or("", |(_, q)| q).to_string();
            h.fetch_add(1, Ordering::SeqCst);
            q.lock().unwrap().push(query.clone());
            let reply = handler(&query);
            let mut head = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                reply.status,
                reply.body.len()
            );
            if let Some(n) = reply.total_pages {
                head.push_str(&format!("x-total-pages: {n}\r\n"));
            }
            head.push_str("\r\n");
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.body.as_bytes());
        }
    });
    Mock { url, hits, queries }
}

fn page_param(query: &str) -> u32 {
    query
        .split('&')
        .find_map(|kv| kv.strip_prefix("page="))
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn photo(id: u32) -> String {
    format!(
        r#"{{"id":"{id}","lat":52.5,"lon":13.4,"direction":90.0,"uploader":"u","image_ref":"img/{id}.jpg"}}"#
    )
}

fn ok(total: u32, ids: &[u32]) -> Reply {
    let items: Vec<String> = ids.iter().map(|&i| photo(i)).collect();
    Reply {
        status: 200,
        total_pages: Some(total),
        body: format!("[{}]", items.join(",")),
    }
}

fn bbox() -> BBox {
    BBox::new(52.50, 13.37, 52.53, 13.40).unwrap()
}

fn quick() -> FetchOptions {
    FetchOptions {
        api_key: Some("k3y".into()),
        max_attempts: 3,
        base_delay: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
    }
}

#[test]
fn walks_all_pages() {
    let mock = serve(|q| match page_param(q) {
        1 => ok(2, &[1, 2, 3]),
        _ => ok(2, &[4, 5]),
    });
    let got = fetch_photo_metadata(&mock.url, &bbox(), 3, &quick()).unwrap();
    let ids: Vec<&str> = got.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["1", "2", "3", "4", "5"]);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 2);
    let queries = mock.queries.lock().unwrap();
    assert!(queries
        .iter()
        .all(|q| q.contains("api_key=k3y") && q.contains("per_page=3")));
}

#[test]
fn empty_area_yields_nothing() {
    let mock = serve(|_| ok(0, &[]));
    assert!(fetch_photo_metadata(&mock.url, &bbox(), 50, &quick())
        .unwrap()
        .is_empty());
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn overlapping_pages_are_merged() {
    let mock = serve(|q| match page_param(q) {
        1 => ok(3, &[1, 2]),
        2 => ok(3, &[2, 3]),
        _ => ok(3, &[3, 1]),
    });
    let got = fetch_photo_metadata(&mock.url, &bbox(), 2, &quick()).unwrap();
    assert_eq!(got.len(), 3);
}

#[test]
fn rejected_key_is_an_auth_error() {
    let mock = serve(|_| Reply {
        status: 401,
        total_pages: None,
        body: "{}".into(),
    });
    let err = fetch_photo_metadata(&mock.url, &bbox(), 10, &quick()).unwrap_err();
    assert!(matches!(err, Error::Auth { status: 401, .. }), "{err}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn broken_json_is_malformed() {
    let mock = serve(|_| Reply {
        status: 200,
        total_pages: Some(1),
        body: "[{\"id\":".into(),
    });
    let err = fetch_photo_metadata(&mock.url, &bbox(), 10, &quick()).unwrap_err();
    assert!(matches!(err, Error::MalformedPage { page: 1, .. }), "{err}");
}

#[test]
fn missing_page_header_is_malformed() {
    let mock = serve(|_| Reply {
        status: 200,
        total_pages: None,
        body: "[]".into(),
    });
    let err = fetch_photo_metadata(&mock.url, &bbox(), 10, &quick()).unwrap_err();
    assert!(matches!(err, Error::MalformedPage { .. }), "{err}");
}

#[test]
fn server_errors_retry_then_give_up() {
    let mock = serve(|_| Reply {
        status: 500,
        total_pages: None,
        body: String::new(),
    });
    let err = fetch_photo_metadata(&mock.url, &bbox(), 10, &quick()).unwrap_err();
    assert!(
        matches!(err, Error::RetryExhausted { attempts: 3, .. }),
        "{err}"
    );
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn transient_failure_recovers() {
    let calls = AtomicUsize::new(0);
    let mock = serve(move |_| {
        if calls.fetch_add(1, Ordering::SeqCst) == 0 {
            Reply {
                status: 503,
                total_pages: None,
                body: String::new(),
            }
        } else {
            ok(1, &[7])
        }
    });
    let got = fetch_photo_metadata(&mock.url, &bbox(), 10, &quick()).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 2);
}
