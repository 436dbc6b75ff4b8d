from setuptools import setup

setup(name='FEATnorm',
      version='0.2.0',
      packages=['FEATnorm'],
      package_data={'FEATnorm': ['config.json']},
      install_requires=['numpy>=1.20', 'scipy>=1.6', 'pandas>=1.5'],
      extras_require={'test': ['pytest', 'astropy'],
                      'docs': ['sphinx', 'sphinx_rtd_theme']},
      entry_points={'console_scripts': ['featnorm = FEATnorm.cli:main']},
      description='Adversarial speaker normalization of learned features',
      python_requires='>=3.8',
      license='GNU GENERAL PUBLIC LICENSE'
      )
