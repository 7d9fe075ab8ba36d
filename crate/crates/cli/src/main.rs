fn main() {
    std::process::exit(gce_cli::run(std::env::args_os()));
}
