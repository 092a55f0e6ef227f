//! Stream-socket transport for the manager.
//!
//! Each client connection gets a reader thread (lines in) and a writer
//! thread (frames out); every inbound line is forwarded to a single
//! dispatcher thread that owns the `ManagerState`. Serializing all
//! mutations through that one thread is what gives handle_message its
//! linearizability: the observable state is always the result of the
//! dispatcher's arrival order.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, info, warn};

use crate::proto::{encode_message, Message};
use crate::service::{Destination, ManagerState, SessionId};

enum Event {
    Connected(SessionId, Sender<Vec<u8>>),
    Line(SessionId, Vec<u8>),
    Disconnected(SessionId),
}

pub struct ManagerServer {
    listener: TcpListener,
    state: ManagerState,
}

/// Handle to a running server; shutting down stops the accept loop and
/// drops the dispatcher once live connections close.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl ManagerServer {
    pub fn bind(addr: &str, state: ManagerState) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Ok(ManagerServer { listener, state })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Runs the accept loop on the calling thread until the process ends.
    pub fn run(self) -> std::io::Result<()> {
        let addr = self.local_addr()?;
        let handle = self.spawn()?;
        info!("reputation manager listening on {addr}");
        // Park forever; the spawned threads do all the work.
        loop {
            std::thread::park();
            if handle.stop.load(Ordering::SeqCst) {
                return Ok(());
            }
        }
    }

    /// Starts the accept loop and dispatcher on background threads.
    pub fn spawn(self) -> std::io::Result<ServerHandle> {
        let addr = self.listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (events_tx, events_rx) = channel::<Event>();

        let mut state = self.state;
        std::thread::spawn(move || dispatcher(&mut state, events_rx));

        let listener = self.listener;
        let accept_stop = Arc::clone(&stop);
        let accept_thread = std::thread::spawn(move || {
            let next_session = AtomicU64::new(1);
            for stream in listener.incoming() {
                if accept_stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let session = SessionId(next_session.fetch_add(1, Ordering::SeqCst));
                        if let Err(e) = start_connection(session, stream, events_tx.clone()) {
                            warn!("failed to start session {}: {e}", session.0);
                        }
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        });

        Ok(ServerHandle {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }
}

fn start_connection(
    session: SessionId,
    stream: TcpStream,
    events: Sender<Event>,
) -> std::io::Result<()> {
    let peer = stream.peer_addr()?;
    debug!("session {} connected from {peer}", session.0);
    let write_half = stream.try_clone()?;
    let (out_tx, out_rx) = channel::<Vec<u8>>();
    events
        .send(Event::Connected(session, out_tx))
        .map_err(|_| std::io::Error::other("dispatcher gone"))?;

    std::thread::spawn(move || writer_loop(write_half, out_rx));
    std::thread::spawn(move || {
        let reader = BufReader::new(stream);
        for line in reader.split(b'\n') {
            match line {
                Ok(line) if line.is_empty() => continue,
                Ok(line) => {
                    if events.send(Event::Line(session, line)).is_err() {
                        break;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = events.send(Event::Disconnected(session));
        debug!("session {} closed", session.0);
    });
    Ok(())
}

fn writer_loop(mut stream: TcpStream, out_rx: Receiver<Vec<u8>>) {
    while let Ok(mut frame) = out_rx.recv() {
        frame.push(b'\n');
        if stream.write_all(&frame).is_err() {
            break;
        }
    }
}

fn dispatcher(state: &mut ManagerState, events: Receiver<Event>) {
    let mut outboxes: std::collections::BTreeMap<SessionId, Sender<Vec<u8>>> =
        std::collections::BTreeMap::new();
    while let Ok(event) = events.recv() {
        match event {
            Event::Connected(session, tx) => {
                outboxes.insert(session, tx);
            }
            Event::Disconnected(session) => {
                outboxes.remove(&session);
                state.drop_session(session);
            }
            Event::Line(session, line) => {
                let outbound = state.handle_line(session, &line);
                for (dest, msg) in outbound {
                    deliver(state, &outboxes, session, &dest, &msg);
                }
            }
        }
    }
}

fn deliver(
    state: &ManagerState,
    outboxes: &std::collections::BTreeMap<SessionId, Sender<Vec<u8>>>,
    sender: SessionId,
    dest: &Destination,
    msg: &Message,
) {
    let target = match dest {
        Destination::Sender => Some(sender),
        Destination::Tenant(tenant) => state.session_of(tenant),
    };
    match target.and_then(|s| outboxes.get(&s)) {
        Some(tx) => {
            let _ = tx.send(encode_message(msg));
        }
        None => debug!("dropping message for unreachable destination {dest:?}"),
    }
}
