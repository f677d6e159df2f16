//! Time-tag stream IO: the 16-byte-record binary format, the CSV
//! alternative, and order-preserving stream merging.
//!
//! ```bash
//! cargo run --release --example tag_stream_io
//! ```

use heraldsim::timetag::{
    merge_streams, read_stream, write_stream, write_stream_csv, Channel, TimeTag,
};

fn main() {
    let apd: Vec<TimeTag> = [120_000, 380_000, 910_000]
        .into_iter()
        .map(|t| TimeTag::new(Channel::Apd854, t))
        .collect();
    let pmt: Vec<TimeTag> = [127_300, 380_000, 650_000]
        .into_iter()
        .map(|t| TimeTag::new(Channel::Pmt393A, t))
        .collect();

    // Merging keeps time order; the tie at 380 us resolves by channel number.
    let merged = merge_streams(&apd, &pmt).expect("both inputs are ordered");
    println!("merged stream:");
    for tag in &merged {
        println!("  {:<10} {:>9} ps", tag.channel.to_string(), tag.time);
    }

    let mut binary = Vec::new();
    let bytes = write_stream(&merged, &mut binary).expect("write");
    println!();
    println!("binary format: {bytes} bytes = 16-byte header + 6 x 16-byte records");
    println!("  header: {:02x?}", &binary[..16]);
    println!("  first record: {:02x?}", &binary[16..32]);

    let back = read_stream(&mut binary.as_slice()).expect("read");
    assert_eq!(back, merged);
    println!("  round trip reproduces the stream exactly");

    let mut csv = Vec::new();
    write_stream_csv(&merged, Some("example stream"), &mut csv).expect("write csv");
    println!();
    println!("CSV alternative:");
    print!("{}", String::from_utf8(csv).unwrap());
}
