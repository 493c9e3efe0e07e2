//! Line-delimited JSON client for detectors running in another process.
//!
//! One request per line, one response per line, in order:
//!
//! ```text
//! > {"type":"hello","version":1}
//! < {"type":"hello","classes":["car","pedestrian"]}
//! > {"type":"detect","id":0,"image":{"w":640,"h":480,"b64":"..."}}
//! < {"type":"detections","id":0,"items":[{"bbox":[u0,v0,u1,v1],"objectness":0.9,"probs":[0.8,0.2]}]}
//! < {"type":"error","id":0,"message":"..."}
//! ```
//!
//! `b64` carries the raw row-major RGB bytes. A bridge that answers the
//! handshake with `"file_images":true` also accepts `"path"` in place of
//! `"b64"`, pointing at a file holding the same raw bytes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{DetectionVector, Detector, Image};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const PROTOCOL_VERSION: u32 = 1;

/// Environment variable naming the bridge command for `cmd` detectors.
pub const DETECTOR_CMD_ENV: &str = "INCX_DETECTOR_CMD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello { version: u32 },
    Detect { id: u64, image: WireImage },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub w: usize,
    pub h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Hello {
        classes: Vec<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        file_images: bool,
    },
    Detections {
        id: u64,
        items: Vec<WireItem>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireItem {
    pub bbox: [f64; 4],
    pub objectness: f64,
    pub probs: Vec<f64>,
}

impl WireItem {
    pub fn from_detection(d: &DetectionVector) -> Self {
        Self {
            bbox: d.bbox.as_array(),
            objectness: d.objectness,
            probs: d.class_probs.clone(),
        }
    }

    fn into_detection(self, n_classes: usize) -> Result<DetectionVector> {
        if self.probs.len() != n_classes {
            return Err(Error::Protocol(format!(
                "{} class probabilities, vocabulary has {n_classes}",
                self.probs.len()
            )));
        }
        let [u0, v0, u1, v1] = self.bbox;
        let bbox = BBox::new(u0, v0, u1, v1).map_err(|e| Error::Protocol(e.to_string()))?;
        DetectionVector::new(bbox, self.objectness, self.probs)
            .map_err(|e| Error::Protocol(e.to_string()))
    }
}

/// Serializes a message as one protocol line (including the newline).
pub fn encode_line<T: Serialize>(msg: &T) -> Result<String> {
    let mut line = serde_json::to_string(msg)?;
    line.push('\n');
    Ok(line)
}

#[derive(Debug, Clone, Default)]
pub struct WireOptions {
    /// Directory for shared image files, used when the bridge accepts them.
    pub shared_file_dir: Option<PathBuf>,
}

/// A detector reached over a duplex line stream.
pub struct WireDetector {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    classes: Vec<String>,
    next_id: u64,
    file_dir: Option<PathBuf>,
    child: Option<Child>,
}

fn unavailable(e: std::io::Error) -> Error {
    Error::DetectorUnavailable(e.to_string())
}

impl WireDetector {
    /// Performs the handshake over an already-open stream pair.
    pub fn handshake(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        opts: WireOptions,
    ) -> Result<Self> {
        let mut det = Self {
            reader,
            writer: Some(writer),
            classes: Vec::new(),
            next_id: 0,
            file_dir: None,
            child: None,
        };
        det.send(&Request::Hello {
            version: PROTOCOL_VERSION,
        })?;
        match det.receive()? {
            Response::Hello {
                classes,
                file_images,
            } => {
                if classes.is_empty() {
                    return Err(Error::Protocol("bridge declared no classes".into()));
                }
                det.classes = classes;
                if file_images {
                    det.file_dir = opts.shared_file_dir;
                }
                Ok(det)
            }
            Response::Error { message, .. } => Err(Error::DetectorUnavailable(message)),
            other => Err(Error::Protocol(format!("expected hello, got {other:?}"))),
        }
    }

    /// Launches `cmd` through the shell and talks to it over stdio.
    pub fn spawn(cmd: &str, opts: WireOptions) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(unavailable)?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| Error::DetectorUnavailable("bridge stdin unavailable".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| Error::DetectorUnavailable("bridge stdout unavailable".into()))?;
        match Self::handshake(Box::new(BufReader::new(stdout)), Box::new(stdin), opts) {
            Ok(mut det) => {
                det.child = Some(child);
                Ok(det)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Connects to a bridge listening on TCP.
    pub fn connect(addr: &str, opts: WireOptions) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(unavailable)?;
        let reader = stream.try_clone().map_err(unavailable)?;
        Self::handshake(Box::new(BufReader::new(reader)), Box::new(stream), opts)
    }

    /// Spawns the command named by `INCX_DETECTOR_CMD`.
    pub fn from_env(opts: WireOptions) -> Result<Self> {
        let cmd = std::env::var(DETECTOR_CMD_ENV)
            .map_err(|_| Error::Config(format!("{DETECTOR_CMD_ENV} is not set")))?;
        Self::spawn(&cmd, opts)
    }

    pub fn uses_shared_files(&self) -> bool {
        self.file_dir.is_some()
    }

    fn send(&mut self, msg: &Request) -> Result<()> {
        let line = encode_line(msg)?;
        let w = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::DetectorUnavailable("stream closed".into()))?;
        w.write_all(line.as_bytes()).map_err(unavailable)?;
        w.flush().map_err(unavailable)
    }

    fn receive(&mut self) -> Result<Response> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(unavailable)?;
        if n == 0 {
            return Err(Error::DetectorUnavailable(
                "bridge closed the stream".into(),
            ));
        }
        serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response {:?}: {e}", line.trim_end())))
    }

    fn wire_image(&self, id: u64, img: &Image) -> Result<(WireImage, Option<PathBuf>)> {
        match &self.file_dir {
            Some(dir) => {
                let path = dir.join(format!("incx-frame-{}-{id}.rgb", std::process::id()));
                fs::write(&path, img.data())?;
                let image = WireImage {
                    w: img.width(),
                    h: img.height(),
                    b64: None,
                    path: Some(path.to_string_lossy().into_owned()),
                };
                Ok((image, Some(path)))
            }
            None => Ok((
                WireImage {
                    w: img.width(),
                    h: img.height(),
                    b64: Some(base64::engine::general_purpose::STANDARD.encode(img.data())),
                    path: None,
                },
                None,
            )),
        }
    }
}

impl Detector for WireDetector {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn detect(&mut self, img: &Image) -> Result<Vec<DetectionVector>> {
        let id = self.next_id;
        self.next_id += 1;
        let (image, shared) = self.wire_image(id, img)?;
        let sent = self.send(&Request::Detect { id, image });
        let response = sent.and_then(|_| self.receive());
        if let Some(path) = shared {
            let _ = fs::remove_file(path);
        }
        match response? {
            Response::Detections { id: got, items } if got == id => items
                .into_iter()
                .map(|item| item.into_detection(self.classes.len()))
                .collect(),
            Response::Detections { id: got, .. } => Err(Error::Protocol(format!(
                "response id {got} does not match request id {id}"
            ))),
            Response::Error { message, .. } => Err(Error::DetectorUnavailable(message)),
            Response::Hello { .. } => Err(Error::Protocol("unexpected hello".into())),
        }
    }
}

impl Drop for WireDetector {
    fn drop(&mut self) {
        // Closing our end lets a well-behaved bridge exit on its own.
        self.writer = None;
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_millis(500);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => return,
                    Ok(None) if Instant::now() < deadline => {
                        std::thread::sleep(Duration::from_millis(10))
                    }
                    _ => break,
                }
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;
    use std::os::unix::net::UnixStream;
    use std::sync::{Arc, Mutex};
    use std::thread;

    fn classes() -> Vec<String> {
        vec!["car".into(), "person".into()]
    }

    /// In-process bridge: answers hello, then each detect with `respond`.
    /// Records every raw line it receives.
    fn serve<S>(
        stream: S,
        file_images: bool,
        respond: impl Fn(u64, &WireImage) -> String + Send + 'static,
    ) -> (thread::JoinHandle<()>, Arc<Mutex<Vec<String>>>)
    where
        S: std::io::Read + Write + Send + 'static + TryCloneStream,
    {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handle = thread::spawn(move || {
            let mut out = stream.try_clone_stream();
            let reader = BufReader::new(stream);
            for line in reader.lines() {
                let Ok(line) = line else { break };
                log.lock().unwrap().push(line.clone());
                let reply = match serde_json::from_str::<Request>(&line) {
                    Ok(Request::Hello { .. }) => encode_line(&Response::Hello {
                        classes: classes(),
                        file_images,
                    })
                    .unwrap(),
                    Ok(Request::Detect { id, image }) => respond(id, &image),
                    Err(_) => "{\"type\":\"error\",\"id\":null,\"message\":\"bad\"}\n".into(),
                };
                if out.write_all(reply.as_bytes()).is_err() {
                    break;
                }
            }
        });
        (handle, seen)
    }

    trait TryCloneStream: Sized {
        fn try_clone_stream(&self) -> Self;
    }
    impl TryCloneStream for UnixStream {
        fn try_clone_stream(&self) -> Self {
            self.try_clone().unwrap()
        }
    }
    impl TryCloneStream for TcpStream {
        fn try_clone_stream(&self) -> Self {
            self.try_clone().unwrap()
        }
    }

    fn client(stream: UnixStream, opts: WireOptions) -> Result<WireDetector> {
        let reader = stream.try_clone().unwrap();
        WireDetector::handshake(Box::new(BufReader::new(reader)), Box::new(stream), opts)
    }

    fn one_box(id: u64) -> String {
        format!(
            "{{\"type\":\"detections\",\"id\":{id},\"items\":[{{\"bbox\":[1.0,2.0,3.0,4.0],\"objectness\":0.9,\"probs\":[0.2,0.8]}}]}}\n"
        )
    }

    #[test]
    fn golden_request_transcript() {
        let (ours, theirs) = UnixStream::pair().unwrap();
        let (handle, seen) = serve(theirs, false, |id, _| one_box(id));
        let mut det = client(ours, WireOptions::default()).unwrap();
        assert_eq!(det.classes(), classes().as_slice());
        let img = Image::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let out = det.detect(&img).unwrap();
        det.detect(&img).unwrap();
        drop(det);
        handle.join().unwrap();

        assert_eq!(out.len(), 1);
        assert_eq!(out[0].label, 1);
        assert_eq!(out[0].bbox.as_array(), [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            *seen.lock().unwrap(),
            vec![
                r#"{"type":"hello","version":1}"#.to_string(),
                r#"{"type":"detect","id":0,"image":{"w":2,"h":1,"b64":"AQIDBAUG"}}"#.to_string(),
                r#"{"type":"detect","id":1,"image":{"w":2,"h":1,"b64":"AQIDBAUG"}}"#.to_string(),
            ]
        );
    }

    #[test]
    fn golden_response_encoding() {
        let hello = Response::Hello {
            classes: classes(),
            file_images: false,
        };
        assert_eq!(
            encode_line(&hello).unwrap(),
            "{\"type\":\"hello\",\"classes\":[\"car\",\"person\"]}\n"
        );
        let err = Response::Error {
            id: Some(3),
            message: "boom".into(),
        };
        assert_eq!(
            encode_line(&err).unwrap(),
            "{\"type\":\"error\",\"id\":3,\"message\":\"boom\"}\n"
        );
        let parsed: Response = serde_json::from_str(one_box(5).trim_end()).unwrap();
        assert_eq!(encode_line(&parsed).unwrap(), one_box(5));
    }

    #[test]
    fn call_log_matches_round_trips() {
        let (ours, theirs) = UnixStream::pair().unwrap();
        let (handle, seen) = serve(theirs, false, |id, _| one_box(id));
        let mut det = super::super::LoggedDetector::new(Box::new(
            client(ours, WireOptions::default()).unwrap(),
        ));
        let img = Image::filled(3, 3, [7, 7, 7]);
        det.detect(&img).unwrap();
        det.detect_batch(&[img.clone(), img.clone(), img]).unwrap();
        let calls = det.calls();
        drop(det);
        handle.join().unwrap();
        let detect_lines = seen.lock().unwrap().len() - 1;
        assert_eq!(calls, 4);
        assert_eq!(detect_lines as u64, calls);
    }

    #[test]
    fn error_and_malformed_responses() {
        let (ours, theirs) = UnixStream::pair().unwrap();
        let (handle, _) = serve(theirs, false, |id, _| {
            match id {
            0 => format!("{{\"type\":\"error\",\"id\":{id},\"message\":\"model crashed\"}}\n"),
            1 => "not json\n".into(),
            2 => one_box(99),
            3 => "{\"type\":\"detections\",\"id\":3,\"items\":[{\"bbox\":[0,0,1,1],\"objectness\":0.5,\"probs\":[1.0]}]}\n".into(),
            _ => one_box(id),
        }
        });
        let mut det = client(ours, WireOptions::default()).unwrap();
        let img = Image::filled(1, 1, [0, 0, 0]);
        assert!(
            matches!(det.detect(&img), Err(Error::DetectorUnavailable(m)) if m == "model crashed")
        );
        assert!(matches!(det.detect(&img), Err(Error::Protocol(_))));
        assert!(matches!(det.detect(&img), Err(Error::Protocol(_))));
        assert!(matches!(det.detect(&img), Err(Error::Protocol(_))));
        assert!(det.detect(&img).is_ok());
        drop(det);
        handle.join().unwrap();
    }

    #[test]
    fn closed_stream_is_unavailable() {
        let (ours, theirs) = UnixStream::pair().unwrap();
        let (handle, _) = serve(theirs, false, |_, _| String::new());
        let mut det = client(ours, WireOptions::default()).unwrap();
        let img = Image::filled(1, 1, [0, 0, 0]);
        let _ = det.writer.take();
        assert!(matches!(
            det.detect(&img),
            Err(Error::DetectorUnavailable(_))
        ));
        drop(det);
        handle.join().unwrap();
    }

    #[test]
    fn shared_file_transport_when_offered() {
        let dir = tempfile::tempdir().unwrap();
        let (ours, theirs) = UnixStream::pair().unwrap();
        let (handle, seen) = serve(theirs, true, |id, image| {
            let bytes = fs::read(image.path.as_ref().unwrap()).unwrap();
            assert_eq!(bytes, vec![9u8; 12]);
            assert!(image.b64.is_none());
            one_box(id)
        });
        let opts = WireOptions {
            shared_file_dir: Some(dir.path().to_path_buf()),
        };
        let mut det = client(ours, opts).unwrap();
        assert!(det.uses_shared_files());
        det.detect(&Image::filled(2, 2, [9, 9, 9])).unwrap();
        drop(det);
        handle.join().unwrap();
        assert!(seen.lock().unwrap()[1].contains("\"path\""));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn tcp_transport() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let (h, _) = serve(stream, false, |id, _| one_box(id));
            h.join().unwrap();
        });
        let mut det = WireDetector::connect(&addr, WireOptions::default()).unwrap();
        assert_eq!(
            det.detect(&Image::filled(1, 1, [1, 1, 1])).unwrap().len(),
            1
        );
        drop(det);
        server.join().unwrap();
    }

    #[test]
    fn spawned_child_bridge() {
        // A shell bridge that answers hello and then one empty detection list.
        let script = r#"read l; echo '{"type":"hello","classes":["a"]}'; read l; echo '{"type":"detections","id":0,"items":[]}'"#;
        let mut det = WireDetector::spawn(script, WireOptions::default()).unwrap();
        assert_eq!(det.classes(), &["a".to_string()]);
        assert!(det
            .detect(&Image::filled(1, 1, [0, 0, 0]))
            .unwrap()
            .is_empty());
        assert!(matches!(
            det.detect(&Image::filled(1, 1, [0, 0, 0])),
            Err(Error::DetectorUnavailable(_))
        ));
    }
}
