//! Loopback transport: ships a [`ParamSet`] through a local TCP socket in
//! checkpoint format, so updates cross a real serialization boundary.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{load_checkpoint_into, save_checkpoint, ParamSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    #[default]
    InProcess,
    Loopback,
}

fn send(addr: std::net::SocketAddr, bytes: Vec<u8>) -> Result<()> {
    let mut s = TcpStream::connect(addr)?;
    s.write_all(&(bytes.len() as u64).to_le_bytes())?;
    s.write_all(&bytes)?;
    s.flush()?;
    Ok(())
}

/// Serializes `params`, sends the bytes from a sender thread to a listener on
/// 127.0.0.1 and decodes what arrives.
pub fn loopback_transfer(params: &ParamSet<f32>) -> Result<ParamSet<f32>> {
    let bytes = save_checkpoint(params, None)?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let sender = thread::spawn(move || send(addr, bytes));
    let (mut stream, _) = listener.accept()?;
    let mut len = [0u8; 8];
    stream.read_exact(&mut len)?;
    let mut buf = vec![0u8; u64::from_le_bytes(len) as usize];
    stream.read_exact(&mut buf)?;
    sender.join().map_err(|_| Error::Contract("loopback sender panicked".into()))??;
    Ok(load_checkpoint_into(&buf, params)?.params)
}

impl Transport {
    pub fn transfer(self, params: &ParamSet<f32>) -> Result<ParamSet<f32>> {
        match self {
            Transport::InProcess => Ok(params.clone()),
            Transport::Loopback => loopback_transfer(params),
        }
    }
}
