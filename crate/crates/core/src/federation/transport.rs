use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use super::wire::{decode_frame, encode_frame, read_frame, write_frame, WireMessage};
use crate::error::{Error, Result};

/// A duplex message channel between the coordinator and one site.
pub trait Transport: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
    fn recv(&mut self) -> Result<WireMessage>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        (**self).recv()
    }
}

/// Shared byte sink recording raw frames as they cross an endpoint.
pub type Capture = Arc<Mutex<Vec<u8>>>;

fn record(capture: &Option<Capture>, bytes: &[u8]) {
    if let Some(c) = capture {
        if let Ok(mut buf) = c.lock() {
            buf.extend_from_slice(bytes);
        }
    }
}

/// In-process endpoint; frames travel as encoded bytes over channels.
pub struct InProcessTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    inbound: Option<Capture>,
}

/// A connected pair of in-process endpoints.
pub fn duplex() -> (InProcessTransport, InProcessTransport) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        InProcessTransport { tx: tx_a, rx: rx_a, inbound: None },
        InProcessTransport { tx: tx_b, rx: rx_b, inbound: None },
    )
}

impl InProcessTransport {
    /// Records every frame this endpoint receives.
    pub fn capture_inbound(mut self, capture: Capture) -> Self {
        self.inbound = Some(capture);
        self
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.tx
            .send(encode_frame(msg)?)
            .map_err(|_| Error::TransportClosed("peer dropped".into()))
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let bytes = self
            .rx
            .recv()
            .map_err(|_| Error::TransportClosed("peer dropped".into()))?;
        record(&self.inbound, &bytes);
        decode_frame(&bytes)
    }
}

/// Stream-socket endpoint using the length-prefixed frame format.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    inbound: Option<Capture>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let writer = BufWriter::new(stream.try_clone()?);
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            inbound: None,
        })
    }

    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    /// Records the raw bytes of every frame this endpoint receives.
    pub fn capture_inbound(mut self, capture: Capture) -> Self {
        self.inbound = Some(capture);
        self
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        write_frame(&mut self.writer, msg)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let (msg, raw) = read_frame(&mut self.reader)?;
        record(&self.inbound, &raw);
        Ok(msg)
    }
}

/// Accepts `n` connections on `listener`, in arrival order.
pub fn accept_sites(listener: &TcpListener, n: usize) -> Result<Vec<TcpTransport>> {
    (0..n)
        .map(|_| {
            let (stream, _) = listener.accept()?;
            TcpTransport::new(stream)
        })
        .collect()
}
