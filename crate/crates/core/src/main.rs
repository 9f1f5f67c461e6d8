fn main() {
    std::process::exit(fourcropnet::cli::run(std::env::args_os()));
}
