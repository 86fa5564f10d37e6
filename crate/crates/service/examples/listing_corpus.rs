//! Writes the built-in "carbon sequestration" demo corpus as JSONL to stdout.

fn main() {
    for p in netmap_core::synth::listing_corpus() {
        println!("{}", p.to_json_line());
    }
}
