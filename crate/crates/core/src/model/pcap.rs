//! Classic libpcap adapter (magic 0xa1b2c3d4, microsecond timestamps).
//!
//! Reading accepts Ethernet (link type 1, with one optional 802.1Q tag) and
//! raw IPv4 (link type 101) captures in either byte order. Frames that do
//! not decode to an IPv4 packet are skipped and counted; a truncated ICMP
//! quotation yields absent fields rather than garbage. Writing always emits
//! raw IPv4 frames so that synthetic traces carry no fabricated link-layer
//! bytes.

use std::io::{Read, Write};
use std::net::Ipv4Addr;

use crate::error::{Error, Result};
use crate::model::trace::TraceParse;
use crate::model::{icmp_type_quotes, PacketRecord, TcpFlags, Transport, MICROS_PER_SEC, PAYLOAD_CAP};

const MAGIC_US: u32 = 0xa1b2_c3d4;
const MAGIC_US_SWAPPED: u32 = 0xd4c3_b2a1;
const MAGIC_NS: u32 = 0xa1b2_3c4d;
const MAGIC_NS_SWAPPED: u32 = 0x4d3c_b2a1;
const MAGIC_PCAPNG: u32 = 0x0a0d_0d0a;

const LINKTYPE_ETHERNET: u32 = 1;
const LINKTYPE_RAW_IP: u32 = 101;

/// Defensive ceiling on per-frame capture length.
const MAX_FRAME: u32 = 256 * 1024;

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    swapped: bool,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        let b = self.take(4)?;
        let raw = [b[0], b[1], b[2], b[3]];
        Some(if self.swapped {
            u32::from_le_bytes(raw)
        } else {
            u32::from_be_bytes(raw)
        })
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn excerpt(bytes: &[u8]) -> Option<Box<[u8]>> {
    if bytes.is_empty() {
        return None;
    }
    let cap = bytes.len().min(PAYLOAD_CAP);
    Some(bytes[..cap].to_vec().into_boxed_slice())
}

/// Decode one captured IPv4 packet into a record. `wire_size` is the
/// original frame length from the record header.
fn decode_ipv4(ip: &[u8], recv_time_us: i64, wire_size: u32) -> Result<PacketRecord> {
    if ip.len() < 20 {
        return Err(Error::data("IPv4 header truncated"));
    }
    let version = ip[0] >> 4;
    if version == 6 {
        return Err(Error::data("IPv6 packet; the toolkit is IPv4 only"));
    }
    if version != 4 {
        return Err(Error::data(format!("unknown IP version {version}")));
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(Error::data("bad IPv4 header length"));
    }
    let proto = ip[9];
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let body = &ip[ihl..];

    let mut record = PacketRecord::new(recv_time_us, src_ip, dst_ip, Transport::Other, wire_size);
    match proto {
        6 => {
            if body.len() < 20 {
                return Err(Error::data("TCP header truncated"));
            }
            record.transport = Transport::Tcp;
            record.src_port = Some(be16(&body[0..2]));
            record.dst_port = Some(be16(&body[2..4]));
            record.tcp_ack = Some(be32(&body[8..12]));
            record.tcp_flags = Some(TcpFlags(body[13] & 0x3f));
            let data_off = ((body[12] >> 4) as usize) * 4;
            if data_off >= 20 && body.len() > data_off {
                record.payload = excerpt(&body[data_off..]);
            }
        }
        17 => {
            if body.len() < 8 {
                return Err(Error::data("UDP header truncated"));
            }
            record.transport = Transport::Udp;
            record.src_port = Some(be16(&body[0..2]));
            record.dst_port = Some(be16(&body[2..4]));
            record.payload = excerpt(&body[8..]);
        }
        1 => {
            if body.len() < 4 {
                return Err(Error::data("ICMP header truncated"));
            }
            record.transport = Transport::Icmp;
            let icmp_type = body[0];
            record.icmp_type = Some(icmp_type);
            record.icmp_code = Some(body[1]);
            if icmp_type == 0 || icmp_type == 8 {
                if body.len() >= 8 {
                    record.icmp_echo_id = Some(be16(&body[4..6]));
                    record.payload = excerpt(&body[8..]);
                }
            } else if icmp_type_quotes(icmp_type) && body.len() > 8 {
                // Quotation: the offending IPv4 packet follows the 8-byte
                // ICMP header. Too short to hold the inner header means the
                // quotation is treated as absent.
                let quote = &body[8..];
                if quote.len() >= 20 && quote[0] >> 4 == 4 {
                    let inner_ihl = ((quote[0] & 0x0f) as usize) * 4;
                    if inner_ihl >= 20 && quote.len() >= inner_ihl {
                        record.quoted_dst_ip =
                            Some(Ipv4Addr::new(quote[16], quote[17], quote[18], quote[19]));
                        record.payload = excerpt(&quote[inner_ihl..]);
                    }
                }
            }
        }
        _ => {
            record.transport = Transport::Other;
        }
    }
    record.validate()?;
    Ok(record)
}

fn decode_frame(frame: &[u8], link_type: u32, recv_time_us: i64, wire_size: u32) -> Result<PacketRecord> {
    match link_type {
        LINKTYPE_RAW_IP => decode_ipv4(frame, recv_time_us, wire_size),
        LINKTYPE_ETHERNET => {
            if frame.len() < 14 {
                return Err(Error::data("Ethernet header truncated"));
            }
            let mut ethertype = be16(&frame[12..14]);
            let mut offset = 14;
            if ethertype == 0x8100 {
                if frame.len() < 18 {
                    return Err(Error::data("802.1Q tag truncated"));
                }
                ethertype = be16(&frame[16..18]);
                offset = 18;
            }
            match ethertype {
                0x0800 => decode_ipv4(&frame[offset..], recv_time_us, wire_size),
                0x86dd => Err(Error::data("IPv6 frame; the toolkit is IPv4 only")),
                other => Err(Error::data(format!("non-IP ethertype 0x{other:04x}"))),
            }
        }
        other => Err(Error::validation(format!("unsupported pcap link type {other}"))),
    }
}

/// Read a classic pcap capture into normalized packet records.
///
/// Corrupt or undecodable frames are skipped and counted; an unusable file
/// header is fatal.
pub fn read_pcap<R: Read>(mut reader: R) -> Result<TraceParse> {
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    if data.len() < 24 {
        return Err(Error::data("pcap file shorter than its global header"));
    }
    let magic = u32::from_be_bytes([data[0], data[1], data[2], data[3]]);
    let swapped = match magic {
        MAGIC_US => false,
        MAGIC_US_SWAPPED => true,
        MAGIC_NS | MAGIC_NS_SWAPPED => {
            return Err(Error::validation(
                "nanosecond pcap variant not supported; expected magic 0xa1b2c3d4",
            ))
        }
        MAGIC_PCAPNG => {
            return Err(Error::validation(
                "pcapng not supported; convert to classic pcap first",
            ))
        }
        other => {
            return Err(Error::data(format!("not a pcap file (magic 0x{other:08x})")))
        }
    };

    let mut cursor = Cursor {
        data: &data,
        pos: 4,
        swapped,
    };
    // version, thiszone, sigfigs, snaplen are not needed; link type is.
    for _ in 0..4 {
        cursor.u32();
    }
    let link_type = cursor
        .u32()
        .ok_or_else(|| Error::data("pcap global header truncated"))?;

    let mut out = TraceParse::default();
    loop {
        if cursor.remaining() == 0 {
            break;
        }
        if cursor.remaining() < 16 {
            log::warn!("pcap: trailing {} bytes are not a full record header", cursor.remaining());
            out.rejected += 1;
            break;
        }
        let ts_sec = cursor.u32().unwrap() as i64;
        let ts_usec = cursor.u32().unwrap() as i64;
        let incl_len = cursor.u32().unwrap();
        let orig_len = cursor.u32().unwrap();
        if incl_len > MAX_FRAME || ts_usec >= MICROS_PER_SEC {
            log::warn!("pcap: implausible record header; stopping");
            out.rejected += 1;
            break;
        }
        let Some(frame) = cursor.take(incl_len as usize) else {
            log::warn!("pcap: frame truncated at end of file");
            out.rejected += 1;
            break;
        };
        let recv_time_us = ts_sec * MICROS_PER_SEC + ts_usec;
        match decode_frame(frame, link_type, recv_time_us, orig_len) {
            Ok(record) => out.records.push(record),
            Err(err) => {
                log::warn!("pcap frame: {err}");
                out.rejected += 1;
            }
        }
    }
    Ok(out)
}

use crate::model::inet_checksum as ip_checksum;

/// Build the raw IPv4 frame for one record.
fn build_ipv4_frame(p: &PacketRecord) -> Result<Vec<u8>> {
    let (proto, body) = match p.transport {
        Transport::Tcp => {
            let mut body = vec![0u8; 20];
            body[0..2].copy_from_slice(&p.src_port.unwrap_or(0).to_be_bytes());
            body[2..4].copy_from_slice(&p.dst_port.unwrap_or(0).to_be_bytes());
            body[8..12].copy_from_slice(&p.tcp_ack.unwrap_or(0).to_be_bytes());
            body[12] = 5 << 4;
            body[13] = p.tcp_flags.map(|f| f.0).unwrap_or(0);
            body[14..16].copy_from_slice(&0xffffu16.to_be_bytes());
            if let Some(payload) = &p.payload {
                body.extend_from_slice(payload);
            }
            (6u8, body)
        }
        Transport::Udp => {
            let payload_len = p.payload.as_ref().map(|b| b.len()).unwrap_or(0);
            let mut body = vec![0u8; 8];
            body[0..2].copy_from_slice(&p.src_port.unwrap_or(0).to_be_bytes());
            body[2..4].copy_from_slice(&p.dst_port.unwrap_or(0).to_be_bytes());
            body[4..6].copy_from_slice(&((8 + payload_len) as u16).to_be_bytes());
            if let Some(payload) = &p.payload {
                body.extend_from_slice(payload);
            }
            (17u8, body)
        }
        Transport::Icmp => {
            let icmp_type = p.icmp_type.unwrap_or(0);
            let mut body = vec![0u8; 8];
            body[0] = icmp_type;
            body[1] = p.icmp_code.unwrap_or(0);
            if icmp_type == 0 || icmp_type == 8 {
                body[4..6].copy_from_slice(&p.icmp_echo_id.unwrap_or(0).to_be_bytes());
                if let Some(payload) = &p.payload {
                    body.extend_from_slice(payload);
                }
            } else if let Some(quoted_dst) = p.quoted_dst_ip {
                // Quote the offending packet: scanner -> target inner header
                // followed by the recorded excerpt of its payload.
                let inner_payload_len = p.payload.as_ref().map(|b| b.len()).unwrap_or(0);
                let mut inner = vec![0u8; 20];
                inner[0] = 0x45;
                inner[2..4].copy_from_slice(&((20 + inner_payload_len) as u16).to_be_bytes());
                inner[8] = 64;
                inner[9] = 17;
                inner[12..16].copy_from_slice(&p.dst_ip.octets());
                inner[16..20].copy_from_slice(&quoted_dst.octets());
                let csum = ip_checksum(&inner);
                inner[10..12].copy_from_slice(&csum.to_be_bytes());
                body.extend_from_slice(&inner);
                if let Some(payload) = &p.payload {
                    body.extend_from_slice(payload);
                }
            } else if let Some(payload) = &p.payload {
                body.extend_from_slice(payload);
            }
            (1u8, body)
        }
        // GRE stands in for "some transport we do not model".
        Transport::Other => (47u8, Vec::new()),
    };

    let mut frame = vec![0u8; 20];
    frame[0] = 0x45;
    frame[2..4].copy_from_slice(&((20 + body.len()) as u16).to_be_bytes());
    frame[8] = 64;
    frame[9] = proto;
    frame[12..16].copy_from_slice(&p.src_ip.octets());
    frame[16..20].copy_from_slice(&p.dst_ip.octets());
    let csum = ip_checksum(&frame[..20]);
    frame[10..12].copy_from_slice(&csum.to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Write records as a classic little-endian pcap capture (raw IPv4 link).
///
/// Each frame's captured length is what we can reconstruct; the record's
/// `size` field becomes the original wire length, so parsing the file back
/// preserves byte accounting. Records whose claimed size is smaller than
/// the reconstructed frame are rejected.
pub fn write_pcap<W: Write>(mut writer: W, records: &[PacketRecord]) -> Result<()> {
    let mut header = Vec::with_capacity(24);
    header.extend_from_slice(&MAGIC_US.to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&4u16.to_le_bytes());
    header.extend_from_slice(&0i32.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&(MAX_FRAME).to_le_bytes());
    header.extend_from_slice(&LINKTYPE_RAW_IP.to_le_bytes());
    writer.write_all(&header)?;

    for record in records {
        if record.recv_time_us < 0 {
            return Err(Error::validation("cannot write pre-epoch timestamp to pcap"));
        }
        let frame = build_ipv4_frame(record)?;
        if (frame.len() as u32) > record.size {
            return Err(Error::validation(format!(
                "record size {} smaller than reconstructed frame {} bytes",
                record.size,
                frame.len()
            )));
        }
        let ts_sec = (record.recv_time_us / MICROS_PER_SEC) as u32;
        let ts_usec = (record.recv_time_us % MICROS_PER_SEC) as u32;
        writer.write_all(&ts_sec.to_le_bytes())?;
        writer.write_all(&ts_usec.to_le_bytes())?;
        writer.write_all(&(frame.len() as u32).to_le_bytes())?;
        writer.write_all(&record.size.to_le_bytes())?;
        writer.write_all(&frame)?;
    }
    Ok(())
}
