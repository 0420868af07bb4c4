#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

pub const MINIMAL_FEED: &str = include_str!("../golden/minimal_feed.xml");
pub const MINIMAL_FEED_ITEM_HTML: &str = include_str!("../golden/minimal_feed_item.html");

pub const APP_ID: &str = "com.mypage.myname";

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Reply {
            status: 200,
            headers: vec![("Content-Type".into(), "application/rss+xml".into())],
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Reply {
            status,
            headers: Vec::new(),
            body: Vec::new(),
            delay: Duration::ZERO,
        }
    }

    pub fn redirect(to: &str) -> Self {
        Reply {
            status: 302,
            headers: vec![("Location".into(), to.into())],
            body: Vec::new(),
            delay: Duration::ZERO,
        }
    }
}

/// Minimal HTTP/1.1 server on a loopback port. One request per connection.
pub struct FixtureServer {
    pub port: u16,
    connections: Arc<AtomicUsize>,
}

impl FixtureServer {
    pub fn start(route: impl Fn(&str) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let connections = Arc::new(AtomicUsize::new(0));
        let counter = connections.clone();
        let route = Arc::new(route);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                counter.fetch_add(1, Ordering::SeqCst);
                let route = route.clone();
                thread::spawn(move || serve(stream, &*route));
            }
        });
        FixtureServer { port, connections }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://127.0.0.1:{}{path}", self.port)
    }

    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, route: &dyn Fn(&str) -> Reply) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) if line == "\r\n" || line == "\n" => break,
            Ok(_) => {}
        }
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let reply = route(&path);
    thread::sleep(reply.delay);
    let mut head = format!(
        "HTTP/1.1 {} X\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    let mut stream = stream;
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(&reply.body);
    let _ = stream.flush();
}

/// The `miniair` binary with `MAIR_HOME` pointed at `home`.
pub fn miniair(home: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miniair"))
        .args(args)
        .env("MAIR_HOME", home)
        .stdin(Stdio::null())
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn descriptor_xml(id: &str, version: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <application xmlns=\"urn:miniair:application\">\n\
         \x20 <id>{id}</id>\n\
         \x20 <filename>myapp</filename>\n\
         \x20 <name>MyApp</name>\n\
         \x20 <version>{version}</version>\n\
         \x20 <initialWindow>\n\
         \x20   <content>index.feedapp</content>\n\
         \x20   <systemChrome>none</systemChrome>\n\
         \x20   <transparent>true</transparent>\n\
         \x20 </initialWindow>\n\
         </application>\n"
    )
}

/// A scratch directory with a feed-reader app, driven through the binary.
/// `home` is the registry root the binary sees.
pub struct Project {
    pub root: PathBuf,
    pub home: PathBuf,
}

impl Project {
    pub fn new(root: &Path) -> Self {
        let p = Project {
            root: root.to_path_buf(),
            home: root.join("home"),
        };
        std::fs::create_dir_all(p.root.join("app")).unwrap();
        std::fs::write(
            p.root.join("app/index.feedapp"),
            "engine=feedreader\nsource=clipboard\n",
        )
        .unwrap();
        p
    }

    pub fn run(&self, args: &[&str]) -> Output {
        miniair(&self.home, args)
    }

    pub fn path(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }

    pub fn certificate(&self, name: &str, seed_byte: u8) {
        let seed = format!("{seed_byte:02x}").repeat(32);
        let o = self.run(&[
            "certificate",
            "--publisher",
            "Example Publisher",
            "--id",
            APP_ID,
            "--key-out",
            &self.path(&format!("{name}.key")),
            "--out",
            &self.path(&format!("{name}.mcert")),
            "--seed",
            &seed,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }

    pub fn package(&self, version: &str, signer: &str, out: &str) -> String {
        std::fs::write(self.root.join("application.xml"), descriptor_xml(APP_ID, version)).unwrap();
        let out = self.path(out);
        let o = self.run(&[
            "package",
            "--dir",
            &self.path("app"),
            "--descriptor",
            &self.path("application.xml"),
            "--cert",
            &self.path(&format!("{signer}.mcert")),
            "--key",
            &self.path(&format!("{signer}.key")),
            "--out",
            &out,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    }
}

pub fn env_map(home: &Path) -> HashMap<String, String> {
    HashMap::from([("MAIR_HOME".to_string(), home.to_str().unwrap().to_string())])
}
