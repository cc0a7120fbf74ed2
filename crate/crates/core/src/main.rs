fn main() {
    std::process::exit(techseg::cli::run(std::env::args_os()));
}
