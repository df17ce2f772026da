pub mod numerics;
pub mod treebank;
pub mod vocab;
pub mod encoder;
pub mod corpus;
pub mod synth;
pub mod embeddings;
pub mod siamese;
pub mod probing;
pub mod attribution;
