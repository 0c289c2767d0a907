fn main() {
    std::process::exit(cylvortex::cli::run(std::env::args_os()));
}
