fn main() {
    std::process::exit(scorpion_cli::run(std::env::args_os()));
}
