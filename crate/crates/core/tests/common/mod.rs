pub mod qmix_reference;
