pub mod dp;
