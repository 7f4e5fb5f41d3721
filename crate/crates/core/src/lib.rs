//! Measurement toolkit for VoWiFi ePDG exposure and IP-based geoblocking.
//!
//! The pipeline discovers operator ePDG endpoints through the standardized
//! `pub.3gppnetwork.org` DNS namespace, probes them with IKEv2 `IKE_SA_INIT`
//! handshakes from multiple vantage points, and classifies DNS- and IKE-layer
//! blocking behavior. A built-in simulated network (`simnet`) serves real DNS
//! and IKEv2 datagrams over loopback sockets so the whole pipeline can be
//! verified end-to-end against planted ground truth.
//!
//! Stages communicate exclusively through append-only JSONL logs, so
//! discovery, probing, classification and reporting can run on different
//! machines or days.

pub mod classify;
pub mod cli;
pub mod config;
pub mod dns;
pub mod geo;
pub mod ike;
pub mod jsonl;
pub mod net_util;
pub mod plmn;
pub mod report;
pub mod simnet;
pub mod vantage;
