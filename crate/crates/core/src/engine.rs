//! Two-party state machines and the in-process driver.
//!
//! Every engine is a pair of [`Party`] values that only talk through
//! [`Bits`] bursts. The same parties run in process via [`run_local`] or over
//! a byte stream via [`crate::wire`].

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::A => Role::B,
            Role::B => Role::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Role::A => 0,
            Role::B => 1,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::A => "A",
            Role::B => "B",
        })
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Role::A),
            "B" | "b" => Ok(Role::B),
            other => Err(Error::InvalidParameter(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    /// Transmit this burst to the peer.
    Send(Bits),
    /// Blocked until the peer's next burst arrives.
    Await,
    /// Finished; later deliveries are dropped.
    Done,
}

pub trait Party {
    fn step(&mut self) -> Result<Step>;
    fn deliver(&mut self, msg: &Bits) -> Result<()>;
}

impl<P: Party + ?Sized> Party for Box<P> {
    fn step(&mut self) -> Result<Step> {
        (**self).step()
    }
    fn deliver(&mut self, msg: &Bits) -> Result<()> {
        (**self).deliver(msg)
    }
}

/// Payload bits each side put on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub bits_a: u64,
    pub bits_b: u64,
    pub messages: u64,
    /// One side finished while the other still expected traffic.
    pub desync: bool,
}

impl Transfer {
    pub fn total(&self) -> u64 {
        self.bits_a + self.bits_b
    }
}

/// Runs both parties to completion in the calling thread.
///
/// Stops when both are done, or when one is done and the other is waiting
/// (a desynchronised run, which only happens after a sampling mismatch).
pub fn run_local(a: &mut dyn Party, b: &mut dyn Party) -> Result<Transfer> {
    let mut transfer = Transfer::default();
    let mut done = [false; 2];
    loop {
        let mut progressed = false;
        for role in [Role::A, Role::B] {
            loop {
                let (me, peer): (&mut dyn Party, &mut dyn Party) = match role {
                    Role::A => (&mut *a, &mut *b),
                    Role::B => (&mut *b, &mut *a),
                };
                match me.step()? {
                    Step::Send(msg) => {
                        if msg.is_empty() {
                            return Err(Error::Protocol(format!("{role} produced an empty burst")));
                        }
                        match role {
                            Role::A => transfer.bits_a += msg.len() as u64,
                            Role::B => transfer.bits_b += msg.len() as u64,
                        }
                        transfer.messages += 1;
                        peer.deliver(&msg)?;
                        progressed = true;
                    }
                    Step::Await => break,
                    Step::Done => {
                        done[role.index()] = true;
                        break;
                    }
                }
            }
        }
        if done[0] && done[1] {
            return Ok(transfer);
        }
        if !progressed {
            if done[0] || done[1] {
                transfer.desync = true;
                return Ok(transfer);
            }
            return Err(Error::Protocol("both parties are waiting".into()));
        }
    }
}
