fn main() {
    std::process::exit(pcalign::harness::cli(std::env::args_os()));
}
