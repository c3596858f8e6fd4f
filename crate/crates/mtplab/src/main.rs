fn main() {
    std::process::exit(mtplab::cli::run_command(std::env::args_os()));
}
