fn main() {
    std::process::exit(lfi_core::cli::run_command(std::env::args_os()));
}
