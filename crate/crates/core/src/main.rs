fn main() {
    std::process::exit(vargraph::cli::run(std::env::args_os()));
}
