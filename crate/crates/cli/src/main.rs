fn main() {
    std::process::exit(mind_cli::run(std::env::args_os()));
}
