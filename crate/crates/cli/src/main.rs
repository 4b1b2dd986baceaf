fn main() {
    std::process::exit(flatdrive_cli::parse_and_dispatch(std::env::args_os(), None));
}
