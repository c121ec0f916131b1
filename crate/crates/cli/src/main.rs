fn main() {
    if let Err(e) = edeblur_cli::run(std::env::args().skip(1)) {
        // Parser messages already carry their own prefix.
        if e.message.starts_with("error:") {
            eprint!("{}", e.message);
        } else {
            eprintln!("error: {e}");
        }
        std::process::exit(e.code);
    }
}
