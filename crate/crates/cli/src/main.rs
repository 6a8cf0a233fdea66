fn main() {
    std::process::exit(speakgate_cli::run(std::env::args_os()));
}
