//! (book chapters are attached as doc-tests here; under construction)
