//! What the response parser accepts, repairs and rejects.

use carmsim::protocol::parse;

fn main() {
    let inputs = [
        r#"<response><landmark index="4">Right Scapula</landmark><reasoning>shoulder blade visible</reasoning><move x_dir="RIGHT" x_mag="SMALL" y_dir="UP" y_mag="LARGE"/></response>"#,
        "Looking at the image...\n<RESPONSE>\n  <landmark index='1'>skull</landmark>\n  <reasoning>cranium &amp; orbit</reasoning>\n  <move y_mag='NONE' y_dir='CENTER' x_mag='MODERATE' x_dir='LEFT' />\n</RESPONSE>\nDone.",
        r#"<response><landmark index="10">T1</landmark><reasoning></reasoning><move x_dir="CENTER" x_mag="SMALL" y_dir="DOWN" y_mag="NONE"/></response>"#,
        r#"<response><landmark index="4">Skull</landmark><reasoning>x</reasoning><move x_dir="RIGHT" x_mag="SMALL" y_dir="UP" y_mag="SMALL"/></response>"#,
        r#"<response><landmark index="4">Right Scapula</landmark><reasoning>x</reasoning><move x_dir="RIGHT" x_mag="HUGE" y_dir="UP" y_mag="SMALL"/></response>"#,
        "I think we should move up a bit.",
    ];
    for text in inputs {
        println!("--- {}", text.replace('\n', " "));
        match parse(text) {
            Ok(p) => {
                let c = p.response.command;
                println!(
                    "landmark {} ({}), move {}/{} {}/{}",
                    p.response.landmark_index,
                    p.response.landmark_name,
                    c.x_dir.as_str(),
                    c.x_mag.as_str(),
                    c.y_dir.as_str(),
                    c.y_mag.as_str()
                );
                for w in &p.warnings {
                    println!("warning: {w}");
                }
            }
            Err(e) => println!("rejected: {e}"),
        }
    }
}
