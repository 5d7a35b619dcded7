fn main() {
    std::process::exit(habitopt::cli::main());
}
