use clueset_core::data::Dataset;

use super::Ctx;
use crate::error::CliResult;

pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let (spec, seed) = (ctx.cfg.generator.clone(), ctx.cfg.seed);
    let data = ctx.rec.timed("generate", || Ok(Dataset::generate(&spec, seed)?))?;
    let dir = ctx.rec.out_dir().to_path_buf();
    data.save(&dir)?;
    ctx.rec.written(&dir.join("dataset.json"))?;
    ctx.rec.written(&dir.join("inputs.bin"))?;
    ctx.rec.write("data.csv", &data.to_csv()?)
}
