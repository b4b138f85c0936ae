export { EmbeddingSet, MetaRecord, encodeEmb1, loadEmb1, metaJsonl, saveEmb1 } from "./emb1.js";
export { PortableRng, dot, norm, sqDist, unit } from "./rng.js";
export { FILES as FIXTURE_FILES, FixtureSpec, generateFixture, writeFixture } from "./fixture.js";
export {
  DEFAULT_TEMPLATES,
  EncoderClient,
  HashEncoder,
  HttpEncoder,
  applyTemplate,
  encodeImages,
  encodeTexts,
  makeEncoder,
} from "./encoder.js";
export {
  CandidateLine,
  DESCRIPTION_PROMPT,
  StubModel,
  TextModel,
  generateCaptions,
  generateDescriptions,
  generateWords,
  makeModel,
  toJsonl,
  withRetries,
} from "./generate.js";
