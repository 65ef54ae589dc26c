fn main() {
    std::process::exit(phrase_critic::cli::run(std::env::args_os()));
}
