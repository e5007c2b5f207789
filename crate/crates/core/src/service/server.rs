//! The verification service and its TCP front end.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use super::protocol::{encode_error, encode_response, read_request, Request, Response};
use super::{verify_slot, SlotResponse, VerifyConfig};
use crate::omc::{OmcError, OmcPipeline};

/// Answers beam requests from the pipeline's model for the requested slot.
///
/// Cloning shares the pipeline, so several clients see the same fits.
#[derive(Debug, Clone)]
pub struct BeamService {
    pipeline: Arc<Mutex<OmcPipeline>>,
    verify: VerifyConfig,
}

impl BeamService {
    pub fn new(pipeline: OmcPipeline, verify: VerifyConfig) -> Self {
        Self {
            pipeline: Arc::new(Mutex::new(pipeline)),
            verify,
        }
    }

    pub fn verify_config(&self) -> &VerifyConfig {
        &self.verify
    }

    /// Verification outcome for one request. Slots the feed cannot cover
    /// are answered with a gap.
    pub fn handle(&self, req: &Request) -> SlotResponse {
        let set = {
            let mut p = self.pipeline.lock().expect("pipeline lock poisoned");
            match p.advance_to(req.slot_hint) {
                Ok(set) => set.clone(),
                Err(OmcError::FeedExhausted { .. } | OmcError::EmptyFeed | OmcError::Config(_)) => {
                    return SlotResponse::gap(req.slot_hint, &req.beams);
                }
            }
        };
        verify_slot(&req.beams, &set, &self.verify)
    }

    /// [`BeamService::handle`] in wire form.
    pub fn respond(&self, req: &Request) -> Response {
        let axes = req.beams.first().map_or(1, |b| b.axes());
        Response::from_slot(&self.handle(req), axes)
    }

    /// Serves requests on one connection until the client hangs up. A
    /// malformed request gets an `ERR` line and ends the session.
    pub fn session(&self, stream: TcpStream) -> io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        loop {
            match read_request(&mut reader) {
                Ok(Some(req)) => {
                    writer.write_all(encode_response(&self.respond(&req)).as_bytes())?;
                    writer.flush()?;
                }
                Ok(None) => return Ok(()),
                Err(e) => {
                    writer.write_all(encode_error(&e.to_string()).as_bytes())?;
                    writer.flush()?;
                    return Ok(());
                }
            }
        }
    }
}

/// Accepts connections one at a time. Returns after `sessions` connections
/// when given, otherwise runs until accepting fails.
pub fn serve(listener: TcpListener, service: &BeamService, sessions: Option<usize>) -> io::Result<()> {
    for (served, stream) in listener.incoming().enumerate() {
        // a dropped client only ends its own session
        let _ = service.session(stream?);
        if sessions.is_some_and(|n| served + 1 >= n) {
            break;
        }
    }
    Ok(())
}
